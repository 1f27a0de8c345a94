#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kgqa/kg.hpp"
#include "kgqa/model.hpp"
#include "kgqa/rng.hpp"
#include "kgqa/types.hpp"

namespace kgqa {

enum class Sampling { Adversarial, Uniform };

std::string to_string(Sampling s);
Sampling sampling_from_string(const std::string& s);

/// Corrupted triples for one positive; each differs from the positive in
/// exactly one endpoint. Scores are filled by the caller.
struct NegativeBatch {
  std::vector<Triple> triples;
  Vector scores;
};

NegativeBatch sample_negatives(Index n_entities, const Triple& positive, int n, Rng& rng);
NegativeBatch sample_negatives(const KnowledgeGraph& kg, const Triple& positive, int n,
                               std::uint64_t seed);

/// Softmax over alpha * scores with max-subtraction.
Vector adversarial_weights(const Vector& neg_scores, Scalar alpha);

/// Noise-contrastive loss, summed over positives:
///   sum_i [ -ln sigma(phi_i) - sum_j p_ij ln sigma(-phi'_ij) ].
/// Uniform sampling uses p_ij = 1/n. Scores inside `negatives` must already
/// be populated against `model`.
Scalar kge_loss(const ScoringModel& model, std::span<const Triple> positives,
                std::span<const NegativeBatch> negatives, Scalar alpha, Sampling sampling);

/// Same loss, recomputing the negative scores from `model` and accumulating
/// `scale * d(loss)/d(params)` into grad. The adversarial weights are
/// treated as constants unless grad_through_weights is set.
Scalar kge_loss_grad(const ScoringModel& model, std::span<const Triple> positives,
                     std::span<NegativeBatch> negatives, Scalar alpha, Sampling sampling,
                     bool grad_through_weights, Scalar scale, ModelGrad& grad);

struct KgeTrainConfig {
  int steps = 25000;
  int batch_size = 1000;
  Scalar learning_rate = 0.01;
  int lr_decay_every = 10000;
  Scalar lr_decay = 0.1;
  Scalar alpha = 1.0;
  int negatives = 16;
  Sampling sampling = Sampling::Adversarial;
  Index dim = 300;
  Scalar gamma = 12.0;
  // Backprop through the adversarial weights instead of treating them as
  // constants. Off by default; ablation only.
  bool grad_through_weights = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TraceRow {
  int step;
  Scalar loss;
  Scalar lr;
};

/// Adam moments for one parameter block.
struct AdamState {
  Matrix m;
  Matrix v;
  explicit AdamState(const Matrix& shape_like)
      : m(Matrix::Zero(shape_like.rows(), shape_like.cols())),
        v(Matrix::Zero(shape_like.rows(), shape_like.cols())) {}
  void update(Matrix& theta, const Matrix& grad, Scalar lr, int t);
};

class KgeTrainer {
 public:
  KgeTrainer(const KnowledgeGraph& kg, std::vector<Triple> train_edges, ModelKind kind,
             const KgeTrainConfig& config);

  /// One optimization step over a sampled batch; returns the batch-mean
  /// loss. Throws NumericError on a non-finite loss.
  Scalar step();

  void run(std::vector<TraceRow>* trace = nullptr);

  ScoringModel& model() { return model_; }
  const ScoringModel& model() const { return model_; }
  Scalar current_lr() const;
  int steps_done() const { return step_; }

 private:
  KgeTrainConfig config_;
  std::vector<Triple> train_;
  Index n_entities_;
  ScoringModel model_;
  ModelGrad grad_;
  std::vector<AdamState> adam_;
  Rng batch_rng_;
  Rng neg_rng_;
  int step_ = 0;
};

ScoringModel train_kge(const KnowledgeGraph& kg, const std::vector<Triple>& train_edges,
                       ModelKind kind, const KgeTrainConfig& config,
                       std::vector<TraceRow>* trace = nullptr);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

}  // namespace kgqa
