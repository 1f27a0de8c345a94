#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgqa/kg.hpp"
#include "kgqa/model.hpp"
#include "kgqa/text.hpp"
#include "kgqa/types.hpp"

namespace kgqa {

inline constexpr int kMaxConcepts = 14;

/// An image given as the ordered list of KG entities detected in it.
struct ImageAsKnowledge {
  std::string image_id;
  std::vector<EntityId> concepts;  // 1..kMaxConcepts entries
};

enum class AnswerSource { Image, Kg };

struct QAInstance {
  TokenSet question;
  int image_index = -1;
  EntityId answer;
  AnswerSource source = AnswerSource::Image;
  Triple fact;
  std::string raw_question;
};

struct QaDataset {
  std::vector<ImageAsKnowledge> images;
  std::unordered_map<std::string, int> image_index;
  std::vector<QAInstance> instances;
};

/// `image_id\tent1|ent2|...`; unresolvable concepts dropped with a warning,
/// at most kMaxConcepts kept in file order.
std::vector<ImageAsKnowledge> load_images(const std::string& path, const KnowledgeGraph& kg);

/// `question\timage_id\tanswer\tsource\thead\trel\ttail`.
QaDataset load_qa_dataset(const std::string& images_path, const std::string& qa_path,
                          const KnowledgeGraph& kg);

/// Gated recurrent cell:
///   z_t = sigma(Wz x_t + Uz h_{t-1} + bz)
///   r_t = sigma(Wr x_t + Ur h_{t-1} + br)
///   c_t = tanh(Wc x_t + Uc (r_t . h_{t-1}) + bc)
///   h_t = z_t . c_t + (1 - z_t) . h_{t-1},  h_0 = 0.
struct GruParams {
  Matrix wz, wr, wc;
  Matrix uz, ur, uc;
  Vector bz, br, bc;
  Index state_dim() const { return wz.rows(); }
  Index input_dim() const { return wz.cols(); }
};

struct GruCache {
  Matrix x;  // input_dim x T
  Matrix z, r, c, h;  // state_dim x T
};

GruCache gru_forward(const Matrix& inputs, const GruParams& p);

struct GruGrad {
  Matrix wz, wr, wc, uz, ur, uc;
  Vector bz, br, bc;
  explicit GruGrad(const GruParams& p);
  void set_zero();
};

/// Backprop through time. `dh` holds dL/dh_t per column.
void gru_backward(const GruParams& p, const GruCache& cache, const Matrix& dh, GruGrad& grad);

/// Per-word hidden states, one row per token. OOV tokens feed zero vectors.
Matrix encode_question(const TokenSet& tokens, const WordVectorTable& table, const GruParams& p);

struct Attention {
  Vector summary;
  Vector weights;
};

/// Question self-attention: weights = softmax(states * w).
Attention attend_question(const Matrix& states, const Vector& w);

/// Image attention: per-concept logit w . [a_q; e_j]; the summary is a
/// convex combination of the image's entity vectors.
Attention attend_image(const Vector& a_q, const ImageAsKnowledge& image,
                       const EmbeddingTable& table, const Vector& w);

/// Affine-ReLU-affine head.
struct AffinePair {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

enum class Head { KVC, KB };

struct FusionParams {
  Vector w_alpha_q;
  Vector w_alpha_i;
  AffinePair kvc;
  AffinePair kb;
};

/// Head applied to [a_i; a_q]. `dropout_mask`, when given, scales the hidden
/// activations (inverted dropout; training only).
Vector fuse(const Vector& a_i, const Vector& a_q, Head head, const FusionParams& params,
            const Vector* dropout_mask = nullptr);

struct GateParams {
  GruParams encoder;
  Vector w_g;
  Scalar b_g = 0.0;
};

/// sigma(w_g . final_state + b); >= 0.5 selects the KVC head.
Scalar gate_probability(const TokenSet& tokens, const WordVectorTable& table,
                        const GateParams& gate);

/// 1 - cos(query, answer); in [0,2].
Scalar fvqa_loss(const Vector& query, const Vector& answer_vec);

struct QaModel {
  GruParams encoder;
  FusionParams fusion;
  GateParams gate;
  Index word_dim = 0;
  Index state_dim = 0;
  Index entity_dim = 0;
  Index hidden_dim = 0;
  /// Counts gated fusion forward passes (instrumentation).
  mutable std::uint64_t fusion_forwards = 0;
};

QaModel init_qa_model(Index word_dim, Index state_dim, Index entity_dim, Index hidden_dim,
                      std::uint64_t seed);

struct GatedQuery {
  Vector query;
  Head head = Head::KVC;
  Scalar gate_prob = 0.5;
  Vector alpha_q;
  Vector alpha_i;
};

/// Full inference path: gate -> encoder -> CoAttention -> selected head.
GatedQuery gated_query(const TokenSet& tokens, const ImageAsKnowledge& image, const QaModel& model,
                       const EmbeddingTable& entities, const WordVectorTable& words);

struct AnswerResult {
  EntityId entity;
  Head head = Head::KVC;
  Scalar gate_prob = 0.5;
  Vector alpha_q;
  Vector alpha_i;
  std::uint64_t score_evals = 0;  // exactly one per candidate
};

/// Argmax of cosine(query, e) over the candidates (default: all entities).
AnswerResult answer(const TokenSet& tokens, const ImageAsKnowledge& image, const QaModel& model,
                    const EmbeddingTable& entities, const WordVectorTable& words,
                    const std::vector<EntityId>* candidates = nullptr);

// ---- training ----

struct QaTrainConfig {
  int epochs = 250;
  int batch_size = 64;
  Scalar learning_rate = 0.01;
  int decay_every = 100;
  Scalar decay = 0.1;
  Scalar weight_decay = 1e-3;  // head weight matrices only
  Scalar dropout = 0.3;
  int gate_epochs = 20;
  Scalar gate_learning_rate = 0.1;
  Index state_dim = 32;
  Index hidden_dim = 0;  // 0 -> 2 * entity_dim
  std::uint64_t seed = 0;

  void validate() const;
};

/// Trains both fusion heads (KVC on image-source instances, KB on kg-source)
/// plus the shared encoder against the cosine loss, then the gate with
/// binary cross-entropy. Entity embeddings stay frozen.
QaModel train_qa(const QaDataset& data, const std::vector<int>& train_indices,
                 const EmbeddingTable& frozen, const WordVectorTable& words,
                 const QaTrainConfig& config);

// Forward/backward internals, exposed for the finite-difference suite.
struct QaForwardCache {
  Matrix inputs;  // word_dim x T
  GruCache gru;
  Vector alpha_q;
  Vector a_q;
  Vector alpha_i;
  Vector a_i;
  std::vector<EntityId> concepts;
  Vector x;    // [a_i; a_q]
  Vector z1;
  Vector a1;   // relu(z1) after dropout scaling when a mask is set
  Vector mask; // empty when dropout off
  Vector query;
  Head head = Head::KVC;
};

QaForwardCache qa_forward(const TokenSet& tokens, const ImageAsKnowledge& image,
                          const GruParams& encoder, const FusionParams& fusion, Head head,
                          const EmbeddingTable& entities, const WordVectorTable& words,
                          const Vector* dropout_mask = nullptr);

struct QaGrad {
  GruGrad encoder;
  Vector w_alpha_q;
  Vector w_alpha_i;
  AffinePair kvc;
  AffinePair kb;
  explicit QaGrad(const QaModel& model);
  void set_zero();
};

/// Accumulates dL/d(params) given dL/d(query).
void qa_backward(const GruParams& encoder, const FusionParams& fusion,
                 const EmbeddingTable& entities, const QaForwardCache& cache,
                 const Vector& dquery, QaGrad& grad);

/// dL/dquery for L = 1 - cos(query, answer).
Vector fvqa_loss_backward(const Vector& query, const Vector& answer_vec);

std::string to_string(AnswerSource s);
AnswerSource answer_source_from_string(const std::string& s);

void save_qa_checkpoint(const QaModel& model, const std::string& path);
QaModel load_qa_checkpoint(const std::string& path);

}  // namespace kgqa
