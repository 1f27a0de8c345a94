#pragma once

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "kgqa/composite.hpp"
#include "kgqa/config.hpp"
#include "kgqa/kge.hpp"
#include "kgqa/linkpred.hpp"
#include "kgqa/qa.hpp"
#include "kgqa/types.hpp"

namespace kgqa {

enum class Stage { Kge, Linkpred, Qa, Eval, Composite };

std::vector<Stage> parse_stages(const std::string& csv);

/// Counts pipeline lookups of removed triples; a clean occluded run keeps
/// hits at zero.
struct TripleAuditor {
  std::unordered_set<Triple, TripleHash> removed;
  mutable std::uint64_t hits = 0;
  void observe(const Triple& t) const {
    if (removed.count(t)) {
      ++hits;
    }
  }
  void observe_all(const std::vector<Triple>& ts) const {
    for (const Triple& t : ts) {
      observe(t);
    }
  }
};

struct ExperimentConfig {
  std::string kg_path;
  std::string vectors_path;
  std::string images_path;
  std::string qa_path;
  std::string kge_checkpoint = "kge.ckpt";
  std::string qa_checkpoint = "qa.ckpt";
  std::string results_csv;
  std::string loss_csv;

  ModelKind kind = ModelKind::Ermlp;
  KgeTrainConfig kge;
  double kg_train_fraction = 0.8;
  std::uint64_t kg_split_seed = 0;

  bool occlude_enabled = false;
  OcclusionSpec occlusion;
  std::string occlusion_facts_path;  // qa-facts mode: TSV of facts to drop

  QaTrainConfig qa;
  double qa_train_fraction = 0.5;
  std::uint64_t qa_split_seed = 0;
  int splits = 1;

  CompositeWeights lambda;
  int top_k = 100;
  bool filtered_eval = false;
  bool raw_kg_score = false;

  /// Canonical key=value view used for the config hash.
  Config as_config() const;
  /// Subset hashes covering only what determines each checkpoint.
  std::uint64_t kge_config_hash() const;
  std::uint64_t qa_config_hash() const;
};

struct QaMetrics {
  Scalar hits1 = 0;
  Scalar hits3 = 0;
  Scalar gate_acc = 0;
  std::size_t n = 0;
};

enum class QaEvalMode { Standalone, Composite };

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> test;
};

/// Deterministic shuffle split of instance indices.
SplitIndices split_instances(std::size_t n, double train_fraction, std::uint64_t seed);

/// Hits@k over ranked candidates (rank 1 = argmax with first-wins ties),
/// plus gate accuracy against the answer-source labels.
QaMetrics evaluate_qa(const QaDataset& data, const std::vector<int>& indices, const QaModel& model,
                      const EmbeddingTable& entities, const WordVectorTable& words,
                      const KnowledgeGraph& kg, QaEvalMode mode, const CompositeWeights& lambda,
                      int top_k, const std::string& attention_dump_path = "",
                      const TripleAuditor* auditor = nullptr);

std::string qa_metrics_json(const QaMetrics& m);

struct BenchRow {
  Index n_entities = 0;
  double median_ms = 0;
  std::uint64_t evals_per_query = 0;
};

/// Median answer() latency at each entity count; counts must ascend.
/// Entity tables are built by cycling the base table's rows.
std::vector<BenchRow> bench_inference(const QaModel& model, const EmbeddingTable& base,
                                      const WordVectorTable& words, const TokenSet& question,
                                      const ImageAsKnowledge& image,
                                      const std::vector<Index>& counts, int repeats);

/// Fixed-column results row: stage-specific metrics leave the rest empty.
struct ResultRow {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string stage;
  std::optional<Scalar> mr, mrr, hits1, hits3, hits10, gate_acc;
};

std::string result_row_csv(const ResultRow& row);
void append_result_row(const std::string& path, const ResultRow& row);

void write_checkpoint_meta(const std::string& ckpt_path, std::uint64_t config_hash);
/// Warns on stderr when the stored hash differs; silent when no meta exists.
void check_checkpoint_meta(const std::string& ckpt_path, std::uint64_t config_hash);

/// Runs the requested stages in canonical order; returns the CSV rows it
/// appended. `qa` requires a kge checkpoint (from this run or disk).
std::vector<std::string> run_pipeline(const ExperimentConfig& config,
                                      const std::vector<Stage>& stages);

}  // namespace kgqa
