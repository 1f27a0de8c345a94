#include "kgqa/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "kgqa/numeric.hpp"
#include "kgqa/rng.hpp"
#include "kgqa/synth.hpp"

namespace kgqa {

std::vector<Stage> parse_stages(const std::string& csv) {
  std::vector<Stage> stages;
  if (csv.empty()) {
    return stages;
  }
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t pos = csv.find(',', start);
    const std::string name =
        csv.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    if (name == "kge") {
      stages.push_back(Stage::Kge);
    } else if (name == "linkpred") {
      stages.push_back(Stage::Linkpred);
    } else if (name == "qa") {
      stages.push_back(Stage::Qa);
    } else if (name == "eval") {
      stages.push_back(Stage::Eval);
    } else if (name == "composite") {
      stages.push_back(Stage::Composite);
    } else if (!name.empty()) {
      throw UsageError("unknown stage: " + name);
    }
    if (pos == std::string::npos) {
      break;
    }
    start = pos + 1;
  }
  return stages;
}

Config ExperimentConfig::as_config() const {
  Config c;
  c.set("kg", kg_path);
  c.set("vectors", vectors_path);
  c.set("images", images_path);
  c.set("qa", qa_path);
  c.set("model", to_string(kind));
  c.set("kge.steps", std::to_string(kge.steps));
  c.set("kge.batch_size", std::to_string(kge.batch_size));
  c.set("kge.lr", std::to_string(kge.learning_rate));
  c.set("kge.dim", std::to_string(kge.dim));
  c.set("kge.gamma", std::to_string(kge.gamma));
  c.set("kge.alpha", std::to_string(kge.alpha));
  c.set("kge.negatives", std::to_string(kge.negatives));
  c.set("kge.sampling", to_string(kge.sampling));
  c.set("kge.seed", std::to_string(kge.seed));
  c.set("kg.train_fraction", std::to_string(kg_train_fraction));
  c.set("kg.split_seed", std::to_string(kg_split_seed));
  c.set("occlude.enabled", occlude_enabled ? "1" : "0");
  if (occlude_enabled) {
    c.set("occlude.mode",
          occlusion.mode == OcclusionSpec::Mode::Fraction ? "fraction" : "qa-facts");
    c.set("occlude.fraction", std::to_string(occlusion.fraction));
    c.set("occlude.seed", std::to_string(occlusion.seed));
  }
  c.set("qa.epochs", std::to_string(qa.epochs));
  c.set("qa.batch_size", std::to_string(qa.batch_size));
  c.set("qa.lr", std::to_string(qa.learning_rate));
  c.set("qa.state_dim", std::to_string(qa.state_dim));
  c.set("qa.seed", std::to_string(qa.seed));
  c.set("qa.train_fraction", std::to_string(qa_train_fraction));
  c.set("qa.split_seed", std::to_string(qa_split_seed));
  c.set("qa.splits", std::to_string(splits));
  c.set("lambda1", std::to_string(lambda.l1));
  c.set("lambda2", std::to_string(lambda.l2));
  c.set("lambda3", std::to_string(lambda.l3));
  c.set("top_k", std::to_string(top_k));
  return c;
}

std::uint64_t ExperimentConfig::kge_config_hash() const {
  Config c;
  c.set("kg", kg_path);
  c.set("model", to_string(kind));
  c.set("kge.steps", std::to_string(kge.steps));
  c.set("kge.batch_size", std::to_string(kge.batch_size));
  c.set("kge.lr", std::to_string(kge.learning_rate));
  c.set("kge.dim", std::to_string(kge.dim));
  c.set("kge.gamma", std::to_string(kge.gamma));
  c.set("kge.alpha", std::to_string(kge.alpha));
  c.set("kge.negatives", std::to_string(kge.negatives));
  c.set("kge.sampling", to_string(kge.sampling));
  c.set("kge.seed", std::to_string(kge.seed));
  c.set("kg.train_fraction", std::to_string(kg_train_fraction));
  c.set("kg.split_seed", std::to_string(kg_split_seed));
  c.set("occlude.enabled", occlude_enabled ? "1" : "0");
  return c.hash();
}

std::uint64_t ExperimentConfig::qa_config_hash() const {
  Config c;
  c.set("kge", hash_hex(kge_config_hash()));
  c.set("vectors", vectors_path);
  c.set("images", images_path);
  c.set("qa", qa_path);
  c.set("qa.epochs", std::to_string(qa.epochs));
  c.set("qa.batch_size", std::to_string(qa.batch_size));
  c.set("qa.lr", std::to_string(qa.learning_rate));
  c.set("qa.state_dim", std::to_string(qa.state_dim));
  c.set("qa.seed", std::to_string(qa.seed));
  c.set("qa.train_fraction", std::to_string(qa_train_fraction));
  c.set("qa.split_seed", std::to_string(qa_split_seed));
  return c.hash();
}

SplitIndices split_instances(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("split_instances: train_fraction must be in (0,1)");
  }
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const std::size_t n_test = floor_fraction(1.0 - train_fraction, n);
  SplitIndices split;
  split.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

namespace {

/// Rank of the true answer among candidates under first-wins tie-breaking.
Index qa_rank(const Vector& scores, Index true_pos) {
  Index rank = 1;
  for (Index i = 0; i < scores.size(); ++i) {
    if (i == true_pos) {
      continue;
    }
    if (scores[i] > scores[true_pos] || (scores[i] == scores[true_pos] && i < true_pos)) {
      ++rank;
    }
  }
  return rank;
}

void dump_attention(std::ostream& out, std::size_t instance, const TokenSet& tokens,
                    const KnowledgeGraph& kg, const std::vector<EntityId>& concepts,
                    const Vector& alpha_q, const Vector& alpha_i) {
  out << "# instance " << instance << '\n' << "alpha_q";
  for (Index t = 0; t < alpha_q.size(); ++t) {
    out << ' ' << tokens[static_cast<std::size_t>(t)] << ':' << alpha_q[t];
  }
  out << '\n' << "alpha_i";
  for (Index j = 0; j < alpha_i.size(); ++j) {
    out << ' ' << kg.entities.surface(concepts[static_cast<std::size_t>(j)].v) << ':'
        << alpha_i[j];
  }
  out << '\n';
}

}  // namespace

QaMetrics evaluate_qa(const QaDataset& data, const std::vector<int>& indices, const QaModel& model,
                      const EmbeddingTable& entities, const WordVectorTable& words,
                      const KnowledgeGraph& kg, QaEvalMode mode, const CompositeWeights& lambda,
                      int top_k, const std::string& attention_dump_path,
                      const TripleAuditor* auditor) {
  if (indices.empty()) {
    throw DataError("evaluate_qa: empty split");
  }
  std::ofstream dump;
  if (!attention_dump_path.empty()) {
    dump.open(attention_dump_path);
    if (!dump) {
      throw DataError("evaluate_qa: cannot open " + attention_dump_path);
    }
  }
  QaMetrics m;
  m.n = indices.size();
  for (int raw_idx : indices) {
    const QAInstance& inst = data.instances[static_cast<std::size_t>(raw_idx)];
    const ImageAsKnowledge& image = data.images[static_cast<std::size_t>(inst.image_index)];
    const Scalar gate = gate_probability(inst.question, words, model.gate);
    const bool gate_says_image = gate >= 0.5;
    if (gate_says_image == (inst.source == AnswerSource::Image)) {
      m.gate_acc += 1.0;
    }
    if (mode == QaEvalMode::Standalone) {
      const GatedQuery gq = gated_query(inst.question, image, model, entities, words);
      Vector scores(entities.entity_vectors.rows());
      for (Index e = 0; e < scores.size(); ++e) {
        scores[e] = cosine(gq.query, entities.entity_vectors.row(e).transpose());
      }
      const Index rank = qa_rank(scores, inst.answer.v);
      m.hits1 += rank <= 1 ? 1.0 : 0.0;
      m.hits3 += rank <= 3 ? 1.0 : 0.0;
      if (dump.is_open()) {
        dump_attention(dump, static_cast<std::size_t>(raw_idx), inst.question, kg, image.concepts,
                       gq.alpha_q, gq.alpha_i);
      }
    } else {
      const auto facts = prune_facts(inst.question, image, kg, words, top_k);
      if (auditor) {
        for (const FactScore& f : facts) {
          auditor->observe(f.fact);
        }
      }
      const CompositeResult res =
          composite_answer(inst.question, image, model, entities, kg, facts, lambda, words);
      Index true_pos = -1;
      for (std::size_t i = 0; i < res.candidates.size(); ++i) {
        if (res.candidates[i] == inst.answer) {
          true_pos = static_cast<Index>(i);
          break;
        }
      }
      if (true_pos >= 0) {
        const Index rank = qa_rank(res.scores, true_pos);
        m.hits1 += rank <= 1 ? 1.0 : 0.0;
        m.hits3 += rank <= 3 ? 1.0 : 0.0;
      }
    }
  }
  const Scalar n = static_cast<Scalar>(m.n);
  m.hits1 /= n;
  m.hits3 /= n;
  m.gate_acc /= n;
  return m;
}

std::string qa_metrics_json(const QaMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "{\"hits1\": %.6g, \"hits3\": %.6g, \"gate_acc\": %.6g}",
                m.hits1, m.hits3, m.gate_acc);
  return buf;
}

std::vector<BenchRow> bench_inference(const QaModel& model, const EmbeddingTable& base,
                                      const WordVectorTable& words, const TokenSet& question,
                                      const ImageAsKnowledge& image,
                                      const std::vector<Index>& counts, int repeats) {
  for (std::size_t i = 1; i < counts.size(); ++i) {
    if (counts[i] <= counts[i - 1]) {
      throw DataError("bench_inference: entity counts must be ascending");
    }
  }
  std::vector<BenchRow> rows;
  if (repeats <= 0) {
    return rows;
  }
  for (Index count : counts) {
    EmbeddingTable big;
    big.dim = base.dim;
    big.relation_params = base.relation_params;
    big.entity_vectors.resize(count, base.entity_vectors.cols());
    for (Index i = 0; i < count; ++i) {
      big.entity_vectors.row(i) = base.entity_vectors.row(i % base.entity_vectors.rows());
    }
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(repeats));
    std::uint64_t evals = 0;
    for (int rep = 0; rep < repeats; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      const AnswerResult res = answer(question, image, model, big, words);
      const auto t1 = std::chrono::steady_clock::now();
      evals = res.score_evals;
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    BenchRow row;
    row.n_entities = count;
    row.median_ms = times[times.size() / 2];
    row.evals_per_query = evals;
    rows.push_back(row);
  }
  return rows;
}

std::string result_row_csv(const ResultRow& row) {
  auto fmt = [](const std::optional<Scalar>& v) {
    if (!v) {
      return std::string();
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return std::string(buf);
  };
  std::string out = row.config_hash + "," + std::to_string(row.seed) + "," + row.stage;
  for (const auto& v : {row.mr, row.mrr, row.hits1, row.hits3, row.hits10, row.gate_acc}) {
    out += "," + fmt(v);
  }
  return out;
}

void append_result_row(const std::string& path, const ResultRow& row) {
  if (path.empty()) {
    return;
  }
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) {
    throw DataError("append_result_row: cannot open " + path);
  }
  if (fresh) {
    out << "config_hash,seed,stage,mr,mrr,hits1,hits3,hits10,gate_acc\n";
  }
  out << result_row_csv(row) << '\n';
}

void write_checkpoint_meta(const std::string& ckpt_path, std::uint64_t config_hash) {
  std::ofstream out(ckpt_path + ".meta");
  if (out) {
    out << "config_hash=" << hash_hex(config_hash) << '\n';
  }
}

void check_checkpoint_meta(const std::string& ckpt_path, std::uint64_t config_hash) {
  std::ifstream in(ckpt_path + ".meta");
  if (!in) {
    return;
  }
  std::string line;
  while (std::getline(in, line)) {
    const std::string prefix = "config_hash=";
    if (line.rfind(prefix, 0) == 0) {
      if (line.substr(prefix.size()) != hash_hex(config_hash)) {
        std::cerr << "warning: " << ckpt_path
                  << " was produced under a different config (stale hash)\n";
      }
      return;
    }
  }
}

std::vector<std::string> run_pipeline(const ExperimentConfig& config,
                                      const std::vector<Stage>& stages_in) {
  std::vector<std::string> rows;
  if (stages_in.empty()) {
    return rows;
  }
  std::set<Stage> stages(stages_in.begin(), stages_in.end());
  const std::uint64_t hash = config.as_config().hash();
  const std::string hash_str = hash_hex(hash);

  KnowledgeGraph kg = load_kg(config.kg_path);
  TripleAuditor auditor;
  if (config.occlude_enabled) {
    std::vector<Triple> facts;
    const KnowledgeGraph* full = &kg;
    std::optional<KnowledgeGraph> occluded;
    if (config.occlusion.mode == OcclusionSpec::Mode::QaFacts) {
      KnowledgeGraph facts_kg = load_kg(config.occlusion_facts_path);
      for (const Triple& t : facts_kg.edges) {
        // resolve the fact surface strings against the main vocabulary
        auto h = kg.entities.find(facts_kg.entities.surface(t.head.v));
        auto r = kg.relations.find(facts_kg.relations.surface(t.rel.v));
        auto tl = kg.entities.find(facts_kg.entities.surface(t.tail.v));
        if (!h || !r || !tl) {
          throw DataError("occlusion fact references unknown vocabulary entry");
        }
        facts.push_back({EntityId(*h), RelationId(*r), EntityId(*tl)});
      }
      occluded = occlude(*full, config.occlusion, &facts);
    } else {
      occluded = occlude(*full, config.occlusion);
    }
    for (const Triple& t : kg.edges) {
      if (!occluded->contains(t)) {
        auditor.removed.insert(t);
      }
    }
    kg = std::move(*occluded);
  }

  std::optional<ScoringModel> model;
  if (stages.count(Stage::Kge)) {
    EdgeSplit split = split_edges(kg, config.kg_train_fraction, config.kg_split_seed);
    auditor.observe_all(split.train);
    std::vector<TraceRow> trace;
    model = train_kge(kg, split.train, config.kind, config.kge, &trace);
    save_checkpoint(*model, config.kge_checkpoint);
    write_checkpoint_meta(config.kge_checkpoint, config.kge_config_hash());
    if (!config.loss_csv.empty()) {
      write_trace_csv(trace, config.loss_csv);
    }
  }
  auto need_model = [&]() -> ScoringModel& {
    if (!model) {
      if (!std::filesystem::exists(config.kge_checkpoint)) {
        throw DataError("pipeline: stage requires kge checkpoint " + config.kge_checkpoint +
                        " (run the kge stage first)");
      }
      check_checkpoint_meta(config.kge_checkpoint, config.kge_config_hash());
      model = load_checkpoint(config.kge_checkpoint);
    }
    return *model;
  };

  if (stages.count(Stage::Linkpred)) {
    EdgeSplit split = split_edges(kg, config.kg_train_fraction, config.kg_split_seed);
    auditor.observe_all(split.test);
    const LinkPredMetrics m =
        evaluate(need_model(), split.test, config.filtered_eval ? &kg : nullptr);
    std::cout << metrics_json(m) << '\n';
    ResultRow row;
    row.config_hash = hash_str;
    row.seed = config.kge.seed;
    row.stage = "linkpred";
    row.mr = m.mr;
    row.mrr = m.mrr;
    row.hits1 = m.hits1;
    row.hits3 = m.hits3;
    row.hits10 = m.hits10;
    append_result_row(config.results_csv, row);
    rows.push_back(result_row_csv(row));
  }

  const bool need_qa =
      stages.count(Stage::Qa) || stages.count(Stage::Eval) || stages.count(Stage::Composite);
  if (!need_qa) {
    if (auditor.hits > 0) {
      throw NumericError("pipeline: occluded triples were consulted");
    }
    return rows;
  }

  const ScoringModel& kge_model = need_model();
  WordVectorTable words = load_vectors(config.vectors_path);
  QaDataset data = load_qa_dataset(config.images_path, config.qa_path, kg);

  std::vector<QaModel> split_models;
  std::vector<SplitIndices> split_indices;
  const int n_splits = std::max(1, config.splits);
  for (int s = 0; s < n_splits; ++s) {
    split_indices.push_back(split_instances(data.instances.size(), config.qa_train_fraction,
                                            config.qa_split_seed + static_cast<std::uint64_t>(s)));
  }
  if (stages.count(Stage::Qa)) {
    for (int s = 0; s < n_splits; ++s) {
      QaTrainConfig qc = config.qa;
      qc.seed = config.qa.seed + static_cast<std::uint64_t>(s);
      split_models.push_back(
          train_qa(data, split_indices[static_cast<std::size_t>(s)].train, kge_model.table, words,
                   qc));
    }
    save_qa_checkpoint(split_models.front(), config.qa_checkpoint);
    write_checkpoint_meta(config.qa_checkpoint, config.qa_config_hash());
  } else {
    if (!std::filesystem::exists(config.qa_checkpoint)) {
      throw DataError("pipeline: stage requires qa checkpoint " + config.qa_checkpoint +
                      " (run the qa stage first)");
    }
    check_checkpoint_meta(config.qa_checkpoint, config.qa_config_hash());
    QaModel loaded = load_qa_checkpoint(config.qa_checkpoint);
    for (int s = 0; s < n_splits; ++s) {
      split_models.push_back(loaded);
    }
  }

  auto averaged_eval = [&](QaEvalMode mode) {
    QaMetrics mean;
    for (int s = 0; s < n_splits; ++s) {
      const QaMetrics m = evaluate_qa(data, split_indices[static_cast<std::size_t>(s)].test,
                                      split_models[static_cast<std::size_t>(s)], kge_model.table,
                                      words, kg, mode, config.lambda, config.top_k, "",
                                      config.occlude_enabled ? &auditor : nullptr);
      mean.hits1 += m.hits1;
      mean.hits3 += m.hits3;
      mean.gate_acc += m.gate_acc;
      mean.n += m.n;
    }
    mean.hits1 /= n_splits;
    mean.hits3 /= n_splits;
    mean.gate_acc /= n_splits;
    return mean;
  };

  if (stages.count(Stage::Eval)) {
    const QaMetrics m = averaged_eval(QaEvalMode::Standalone);
    std::cout << qa_metrics_json(m) << '\n';
    ResultRow row;
    row.config_hash = hash_str;
    row.seed = config.qa.seed;
    row.stage = "eval";
    row.hits1 = m.hits1;
    row.hits3 = m.hits3;
    row.gate_acc = m.gate_acc;
    append_result_row(config.results_csv, row);
    rows.push_back(result_row_csv(row));
  }
  if (stages.count(Stage::Composite)) {
    const QaMetrics m = averaged_eval(QaEvalMode::Composite);
    std::cout << qa_metrics_json(m) << '\n';
    ResultRow row;
    row.config_hash = hash_str;
    row.seed = config.qa.seed;
    row.stage = "composite";
    row.hits1 = m.hits1;
    row.hits3 = m.hits3;
    row.gate_acc = m.gate_acc;
    append_result_row(config.results_csv, row);
    rows.push_back(result_row_csv(row));
  }
  if (auditor.hits > 0) {
    throw NumericError("pipeline: occluded triples were consulted");
  }
  return rows;
}

}  // namespace kgqa
