#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "kgqa/types.hpp"

namespace kgqa {

enum class ModelKind { TransE, RotatE, Ermlp };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Entity rows are N_e wide. Relation rows are N_e wide for TransE/ERMLP and
/// N_e/2 phase angles for RotatE (one angle per complex pair; entity rows are
/// interleaved re/im).
struct EmbeddingTable {
  Matrix entity_vectors;
  Matrix relation_params;
  Index dim = 0;
};

/// 3N_e -> 2N_e -> N_e -> 1, rectified-linear hidden activations,
/// raw affine output as the score logit.
struct ErmlpWeights {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Vector w3;
  Scalar b3 = 0.0;
};

struct ScoringModel {
  ModelKind kind = ModelKind::TransE;
  EmbeddingTable table;
  std::optional<ErmlpWeights> ermlp;
  Scalar gamma = 12.0;

  Index n_entities() const { return table.entity_vectors.rows(); }
  Index n_relations() const { return table.relation_params.rows(); }
};

Index relation_dim(ModelKind kind, Index entity_dim);

/// Uniform init: entities/relations in +-6/sqrt(N_e), RotatE phases in
/// [-pi, pi], ERMLP layers Glorot-uniform with zero biases.
ScoringModel init_model(ModelKind kind, Index n_entities, Index n_relations, Index dim,
                        Scalar gamma, std::uint64_t seed);

Scalar score(const ScoringModel& model, EntityId h, RelationId r, EntityId t);
inline Scalar score(const ScoringModel& model, const Triple& f) {
  return score(model, f.head, f.rel, f.tail);
}

/// Hadamard rotation of an interleaved-complex entity row by phase angles.
Vector rotate_pairs(const Vector& entity, const Vector& phases);

/// Gradient accumulators shaped like the model parameters.
struct ModelGrad {
  Matrix entity;
  Matrix relation;
  ErmlpWeights ermlp;

  explicit ModelGrad(const ScoringModel& model);
  void set_zero();
};

/// Accumulates upstream * d(score)/d(params) into grad.
void accumulate_score_grad(const ScoringModel& model, const Triple& f, Scalar upstream,
                           ModelGrad& grad);

void save_checkpoint(const ScoringModel& model, const std::string& path);
ScoringModel load_checkpoint(const std::string& path);

}  // namespace kgqa
