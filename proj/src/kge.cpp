#include "kgqa/kge.hpp"

#include <cmath>
#include <fstream>

#include "kgqa/numeric.hpp"

namespace kgqa {

std::string to_string(Sampling s) {
  return s == Sampling::Adversarial ? "adversarial" : "uniform";
}

Sampling sampling_from_string(const std::string& s) {
  if (s == "adversarial") return Sampling::Adversarial;
  if (s == "uniform") return Sampling::Uniform;
  throw DataError("unknown sampling mode: " + s);
}

NegativeBatch sample_negatives(Index n_entities, const Triple& positive, int n, Rng& rng) {
  if (n < 1) {
    throw DataError("sample_negatives: n must be >= 1");
  }
  if (n_entities < 2) {
    throw DataError("sample_negatives: need at least 2 entities to corrupt");
  }
  NegativeBatch batch;
  batch.triples.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    Triple f = positive;
    const bool corrupt_head = rng.coin();
    const Index orig = corrupt_head ? f.head.v : f.tail.v;
    Index repl = static_cast<Index>(rng.below(static_cast<std::size_t>(n_entities - 1)));
    if (repl >= orig) {
      ++repl;
    }
    if (corrupt_head) {
      f.head = EntityId(static_cast<std::int32_t>(repl));
    } else {
      f.tail = EntityId(static_cast<std::int32_t>(repl));
    }
    batch.triples.push_back(f);
  }
  batch.scores = Vector::Zero(n);
  return batch;
}

NegativeBatch sample_negatives(const KnowledgeGraph& kg, const Triple& positive, int n,
                               std::uint64_t seed) {
  Rng rng(seed);
  return sample_negatives(kg.entities.size(), positive, n, rng);
}

Vector adversarial_weights(const Vector& neg_scores, Scalar alpha) {
  if (neg_scores.size() == 0) {
    throw DataError("adversarial_weights: empty score list");
  }
  if (alpha < 0) {
    throw DataError("adversarial_weights: alpha must be >= 0");
  }
  return softmax_stable((alpha * neg_scores).eval());
}

Scalar kge_loss(const ScoringModel& model, std::span<const Triple> positives,
                std::span<const NegativeBatch> negatives, Scalar alpha, Sampling sampling) {
  if (positives.size() != negatives.size()) {
    throw DataError("kge_loss: one NegativeBatch required per positive");
  }
  Scalar loss = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    loss += softplus(-score(model, positives[i]));
    const NegativeBatch& nb = negatives[i];
    const Index n = nb.scores.size();
    Vector p;
    if (sampling == Sampling::Adversarial) {
      p = adversarial_weights(nb.scores, alpha);
    } else {
      p = Vector::Constant(n, 1.0 / static_cast<Scalar>(n));
    }
    for (Index j = 0; j < n; ++j) {
      loss += p[j] * softplus(nb.scores[j]);
    }
  }
  return loss;
}

Scalar kge_loss_grad(const ScoringModel& model, std::span<const Triple> positives,
                     std::span<NegativeBatch> negatives, Scalar alpha, Sampling sampling,
                     bool grad_through_weights, Scalar scale, ModelGrad& grad) {
  if (positives.size() != negatives.size()) {
    throw DataError("kge_loss_grad: one NegativeBatch required per positive");
  }
  Scalar loss = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    NegativeBatch& nb = negatives[i];
    for (Index j = 0; j < nb.scores.size(); ++j) {
      nb.scores[j] = score(model, nb.triples[static_cast<std::size_t>(j)]);
    }
    const Scalar pos_score = score(model, positives[i]);
    const Index n = nb.scores.size();
    Vector p;
    if (sampling == Sampling::Adversarial) {
      p = adversarial_weights(nb.scores, alpha);
    } else {
      p = Vector::Constant(n, 1.0 / static_cast<Scalar>(n));
    }
    loss += softplus(-pos_score);
    Scalar weighted_sp = 0.0;
    for (Index j = 0; j < n; ++j) {
      const Scalar sp = softplus(nb.scores[j]);
      loss += p[j] * sp;
      weighted_sp += p[j] * sp;
    }
    accumulate_score_grad(model, positives[i], scale * (sigmoid(pos_score) - 1.0), grad);
    for (Index j = 0; j < n; ++j) {
      Scalar up = p[j] * sigmoid(nb.scores[j]);
      if (grad_through_weights && sampling == Sampling::Adversarial) {
        up += alpha * p[j] * (softplus(nb.scores[j]) - weighted_sp);
      }
      accumulate_score_grad(model, nb.triples[static_cast<std::size_t>(j)], scale * up, grad);
    }
  }
  return loss;
}

void KgeTrainConfig::validate() const {
  if (steps < 0) throw DataError("kge config: steps must be >= 0");
  if (batch_size <= 0) throw DataError("kge config: batch_size must be positive");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw DataError("kge config: learning_rate must be positive and finite");
  }
  if (lr_decay_every <= 0) throw DataError("kge config: lr_decay_every must be positive");
  if (!(lr_decay > 0)) throw DataError("kge config: lr_decay must be positive");
  if (alpha < 0 || !std::isfinite(alpha)) throw DataError("kge config: alpha must be >= 0");
  if (negatives < 1) throw DataError("kge config: negatives must be >= 1");
  if (dim < 1) throw DataError("kge config: dim must be >= 1");
  if (!(gamma > 0)) throw DataError("kge config: gamma must be positive");
}

void AdamState::update(Matrix& theta, const Matrix& grad, Scalar lr, int t) {
  constexpr Scalar beta1 = 0.9;
  constexpr Scalar beta2 = 0.999;
  constexpr Scalar eps = 1e-8;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const Scalar bc1 = 1.0 - std::pow(beta1, t);
  const Scalar bc2 = 1.0 - std::pow(beta2, t);
  theta.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

KgeTrainer::KgeTrainer(const KnowledgeGraph& kg, std::vector<Triple> train_edges, ModelKind kind,
                       const KgeTrainConfig& config)
    : config_(config),
      train_(std::move(train_edges)),
      n_entities_(kg.entities.size()),
      model_(init_model(kind, kg.entities.size(), kg.relations.size(), config.dim, config.gamma,
                        config.seed)),
      grad_(model_),
      batch_rng_(Rng(config.seed).fork(0xba7c)),
      neg_rng_(Rng(config.seed).fork(0x4e65)) {
  config_.validate();
  if (train_.empty()) {
    throw DataError("train_kge: empty training edge list");
  }
  adam_.emplace_back(model_.table.entity_vectors);
  adam_.emplace_back(model_.table.relation_params);
  if (model_.ermlp) {
    adam_.emplace_back(model_.ermlp->w1);
    adam_.emplace_back(Matrix(model_.ermlp->b1));
    adam_.emplace_back(model_.ermlp->w2);
    adam_.emplace_back(Matrix(model_.ermlp->b2));
    adam_.emplace_back(Matrix(model_.ermlp->w3));
    adam_.emplace_back(Matrix::Zero(1, 1));
  }
}

Scalar KgeTrainer::current_lr() const {
  const int decays = step_ / config_.lr_decay_every;
  return config_.learning_rate * std::pow(config_.lr_decay, decays);
}

Scalar KgeTrainer::step() {
  const Scalar lr = current_lr();
  const int B = config_.batch_size;
  grad_.set_zero();
  std::vector<Triple> positives;
  std::vector<NegativeBatch> negatives;
  positives.reserve(static_cast<std::size_t>(B));
  negatives.reserve(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) {
    positives.push_back(train_[batch_rng_.below(train_.size())]);
    negatives.push_back(sample_negatives(n_entities_, positives.back(), config_.negatives,
                                         neg_rng_));
  }
  const Scalar inv_b = 1.0 / static_cast<Scalar>(B);
  Scalar loss = kge_loss_grad(model_, positives, negatives, config_.alpha, config_.sampling,
                              config_.grad_through_weights, inv_b, grad_);
  loss *= inv_b;
  if (!std::isfinite(loss)) {
    throw NumericError("train_kge: non-finite loss at step " + std::to_string(step_));
  }
  ++step_;
  adam_[0].update(model_.table.entity_vectors, grad_.entity, lr, step_);
  adam_[1].update(model_.table.relation_params, grad_.relation, lr, step_);
  if (model_.ermlp) {
    ErmlpWeights& w = *model_.ermlp;
    adam_[2].update(w.w1, grad_.ermlp.w1, lr, step_);
    Matrix b1 = w.b1;
    adam_[3].update(b1, Matrix(grad_.ermlp.b1), lr, step_);
    w.b1 = b1;
    adam_[4].update(w.w2, grad_.ermlp.w2, lr, step_);
    Matrix b2 = w.b2;
    adam_[5].update(b2, Matrix(grad_.ermlp.b2), lr, step_);
    w.b2 = b2;
    Matrix w3 = w.w3;
    adam_[6].update(w3, Matrix(grad_.ermlp.w3), lr, step_);
    w.w3 = w3;
    Matrix b3 = Matrix::Constant(1, 1, w.b3);
    Matrix gb3 = Matrix::Constant(1, 1, grad_.ermlp.b3);
    adam_[7].update(b3, gb3, lr, step_);
    w.b3 = b3(0, 0);
  }
  return loss;
}

void KgeTrainer::run(std::vector<TraceRow>* trace) {
  for (int s = 0; s < config_.steps; ++s) {
    const Scalar lr = current_lr();
    const Scalar loss = step();
    if (trace) {
      trace->push_back({step_, loss, lr});
    }
  }
}

ScoringModel train_kge(const KnowledgeGraph& kg, const std::vector<Triple>& train_edges,
                       ModelKind kind, const KgeTrainConfig& config,
                       std::vector<TraceRow>* trace) {
  KgeTrainer trainer(kg, train_edges, kind, config);
  trainer.run(trace);
  return std::move(trainer.model());
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("write_trace_csv: cannot open " + path);
  }
  out << "step,loss,lr\n";
  char buf[64];
  for (const TraceRow& row : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", row.step, row.loss, row.lr);
    out << buf;
  }
}

}  // namespace kgqa
