#include "kgqa/qa.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "kgqa/numeric.hpp"
#include "kgqa/rng.hpp"

namespace kgqa {

std::string to_string(AnswerSource s) { return s == AnswerSource::Image ? "image" : "kg"; }

AnswerSource answer_source_from_string(const std::string& s) {
  if (s == "image") return AnswerSource::Image;
  if (s == "kg") return AnswerSource::Kg;
  throw DataError("unknown answer source: " + s);
}

namespace {

std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

}  // namespace

std::vector<ImageAsKnowledge> load_images(const std::string& path, const KnowledgeGraph& kg) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("load_images: cannot open " + path);
  }
  std::vector<ImageAsKnowledge> images;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != 2 || fields[0].empty()) {
      throw DataError("load_images: malformed line " + std::to_string(lineno));
    }
    ImageAsKnowledge img;
    img.image_id = fields[0];
    for (const std::string& surface : split_on(fields[1], '|')) {
      if (static_cast<int>(img.concepts.size()) >= kMaxConcepts) {
        break;
      }
      auto id = kg.entities.find(ascii_lower(surface));
      if (!id) {
        std::cerr << "warning: image " << img.image_id << ": unresolvable concept '" << surface
                  << "' dropped\n";
        continue;
      }
      img.concepts.push_back(EntityId(*id));
    }
    if (img.concepts.empty()) {
      std::cerr << "warning: image " << img.image_id << " has no resolvable concepts; dropped\n";
      continue;
    }
    images.push_back(std::move(img));
  }
  return images;
}

QaDataset load_qa_dataset(const std::string& images_path, const std::string& qa_path,
                          const KnowledgeGraph& kg) {
  QaDataset data;
  data.images = load_images(images_path, kg);
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    data.image_index.emplace(data.images[i].image_id, static_cast<int>(i));
  }
  std::ifstream in(qa_path);
  if (!in) {
    throw DataError("load_qa_dataset: cannot open " + qa_path);
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != 7) {
      throw DataError("load_qa_dataset: malformed line " + std::to_string(lineno) +
                      " (expected 7 tab-separated fields)");
    }
    QAInstance inst;
    inst.raw_question = fields[0];
    inst.question = tokenize(fields[0]);
    if (inst.question.empty()) {
      throw DataError("load_qa_dataset: empty question at line " + std::to_string(lineno));
    }
    auto img_it = data.image_index.find(fields[1]);
    if (img_it == data.image_index.end()) {
      throw DataError("load_qa_dataset: unknown image '" + fields[1] + "' at line " +
                      std::to_string(lineno));
    }
    inst.image_index = img_it->second;
    auto resolve_entity = [&](const std::string& s) {
      auto id = kg.entities.find(ascii_lower(s));
      if (!id) {
        throw DataError("load_qa_dataset: unknown entity '" + s + "' at line " +
                        std::to_string(lineno));
      }
      return EntityId(*id);
    };
    inst.answer = resolve_entity(fields[2]);
    inst.source = answer_source_from_string(fields[3]);
    inst.fact.head = resolve_entity(fields[4]);
    auto rel = kg.relations.find(ascii_lower(fields[5]));
    if (!rel) {
      throw DataError("load_qa_dataset: unknown relation '" + fields[5] + "' at line " +
                      std::to_string(lineno));
    }
    inst.fact.rel = RelationId(*rel);
    inst.fact.tail = resolve_entity(fields[6]);
    if (inst.source == AnswerSource::Image) {
      const auto& concepts = data.images[static_cast<std::size_t>(inst.image_index)].concepts;
      bool found = false;
      for (EntityId c : concepts) {
        found = found || c == inst.answer;
      }
      if (!found) {
        throw DataError("load_qa_dataset: image-source answer not among image concepts at line " +
                        std::to_string(lineno));
      }
    }
    data.instances.push_back(std::move(inst));
  }
  return data;
}

GruCache gru_forward(const Matrix& inputs, const GruParams& p) {
  const Index s = p.state_dim();
  const Index T = inputs.cols();
  GruCache cache;
  cache.x = inputs;
  cache.z.resize(s, T);
  cache.r.resize(s, T);
  cache.c.resize(s, T);
  cache.h.resize(s, T);
  Vector h_prev = Vector::Zero(s);
  for (Index t = 0; t < T; ++t) {
    const Vector xt = inputs.col(t);
    Vector z = p.wz * xt + p.uz * h_prev + p.bz;
    Vector r = p.wr * xt + p.ur * h_prev + p.br;
    for (Index i = 0; i < s; ++i) {
      z[i] = sigmoid(z[i]);
      r[i] = sigmoid(r[i]);
    }
    const Vector c = (p.wc * xt + p.uc * (r.cwiseProduct(h_prev)) + p.bc).array().tanh();
    const Vector h = z.cwiseProduct(c) + (Vector::Ones(s) - z).cwiseProduct(h_prev);
    cache.z.col(t) = z;
    cache.r.col(t) = r;
    cache.c.col(t) = c;
    cache.h.col(t) = h;
    h_prev = h;
  }
  return cache;
}

GruGrad::GruGrad(const GruParams& p)
    : wz(Matrix::Zero(p.wz.rows(), p.wz.cols())),
      wr(Matrix::Zero(p.wr.rows(), p.wr.cols())),
      wc(Matrix::Zero(p.wc.rows(), p.wc.cols())),
      uz(Matrix::Zero(p.uz.rows(), p.uz.cols())),
      ur(Matrix::Zero(p.ur.rows(), p.ur.cols())),
      uc(Matrix::Zero(p.uc.rows(), p.uc.cols())),
      bz(Vector::Zero(p.bz.size())),
      br(Vector::Zero(p.br.size())),
      bc(Vector::Zero(p.bc.size())) {}

void GruGrad::set_zero() {
  wz.setZero();
  wr.setZero();
  wc.setZero();
  uz.setZero();
  ur.setZero();
  uc.setZero();
  bz.setZero();
  br.setZero();
  bc.setZero();
}

void gru_backward(const GruParams& p, const GruCache& cache, const Matrix& dh, GruGrad& grad) {
  const Index s = p.state_dim();
  const Index T = cache.h.cols();
  Vector carry = Vector::Zero(s);
  for (Index t = T - 1; t >= 0; --t) {
    const Vector g_h = dh.col(t) + carry;
    const Vector h_prev = t > 0 ? Vector(cache.h.col(t - 1)) : Vector(Vector::Zero(s));
    const Vector z = cache.z.col(t);
    const Vector r = cache.r.col(t);
    const Vector c = cache.c.col(t);
    const Vector xt = cache.x.col(t);

    const Vector g_z = g_h.cwiseProduct(c - h_prev);
    const Vector g_c = g_h.cwiseProduct(z);
    Vector g_hprev = g_h.cwiseProduct(Vector::Ones(s) - z);

    const Vector g_ac = g_c.cwiseProduct(Vector::Ones(s) - c.cwiseProduct(c));
    grad.wc += g_ac * xt.transpose();
    grad.uc += g_ac * (r.cwiseProduct(h_prev)).transpose();
    grad.bc += g_ac;
    const Vector g_rh = p.uc.transpose() * g_ac;
    const Vector g_r = g_rh.cwiseProduct(h_prev);
    g_hprev += g_rh.cwiseProduct(r);

    const Vector g_az = g_z.cwiseProduct(z.cwiseProduct(Vector::Ones(s) - z));
    grad.wz += g_az * xt.transpose();
    grad.uz += g_az * h_prev.transpose();
    grad.bz += g_az;
    g_hprev += p.uz.transpose() * g_az;

    const Vector g_ar = g_r.cwiseProduct(r.cwiseProduct(Vector::Ones(s) - r));
    grad.wr += g_ar * xt.transpose();
    grad.ur += g_ar * h_prev.transpose();
    grad.br += g_ar;
    g_hprev += p.ur.transpose() * g_ar;

    carry = g_hprev;
  }
}

namespace {

Matrix question_inputs(const TokenSet& tokens, const WordVectorTable& table) {
  if (tokens.empty()) {
    throw DataError("encode_question: empty question");
  }
  Matrix inputs = Matrix::Zero(table.dim(), static_cast<Index>(tokens.size()));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (auto row = table.find(tokens[t])) {
      inputs.col(static_cast<Index>(t)) = table.vector(*row);
    }
  }
  return inputs;
}

}  // namespace

Matrix encode_question(const TokenSet& tokens, const WordVectorTable& table, const GruParams& p) {
  const GruCache cache = gru_forward(question_inputs(tokens, table), p);
  return cache.h.transpose();
}

Attention attend_question(const Matrix& states, const Vector& w) {
  if (states.rows() == 0) {
    throw DataError("attend_question: no states");
  }
  Attention att;
  att.weights = softmax_stable((states * w).eval());
  att.summary = states.transpose() * att.weights;
  return att;
}

Attention attend_image(const Vector& a_q, const ImageAsKnowledge& image,
                       const EmbeddingTable& table, const Vector& w) {
  const Index m = static_cast<Index>(image.concepts.size());
  if (m == 0) {
    throw DataError("attend_image: empty concept list");
  }
  const Index s = a_q.size();
  const Index ne = table.entity_vectors.cols();
  Vector logits(m);
  for (Index j = 0; j < m; ++j) {
    const auto e = table.entity_vectors.row(image.concepts[static_cast<std::size_t>(j)].v);
    logits[j] = w.head(s).dot(a_q) + w.tail(ne).dot(e);
  }
  Attention att;
  att.weights = softmax_stable(logits);
  att.summary = Vector::Zero(ne);
  for (Index j = 0; j < m; ++j) {
    att.summary +=
        att.weights[j] *
        table.entity_vectors.row(image.concepts[static_cast<std::size_t>(j)].v).transpose();
  }
  return att;
}

Vector fuse(const Vector& a_i, const Vector& a_q, Head head, const FusionParams& params,
            const Vector* dropout_mask) {
  const AffinePair& ap = head == Head::KVC ? params.kvc : params.kb;
  if (ap.w1.cols() != a_i.size() + a_q.size()) {
    throw DataError("fuse: dimension mismatch");
  }
  Vector x(a_i.size() + a_q.size());
  x << a_i, a_q;
  Vector a1 = (ap.w1 * x + ap.b1).cwiseMax(0.0);
  if (dropout_mask) {
    a1 = a1.cwiseProduct(*dropout_mask);
  }
  return ap.w2 * a1 + ap.b2;
}

Scalar gate_probability(const TokenSet& tokens, const WordVectorTable& table,
                        const GateParams& gate) {
  const GruCache cache = gru_forward(question_inputs(tokens, table), gate.encoder);
  const Vector final_state = cache.h.col(cache.h.cols() - 1);
  return sigmoid(gate.w_g.dot(final_state) + gate.b_g);
}

Scalar fvqa_loss(const Vector& query, const Vector& answer_vec) {
  if (query.norm() == 0.0 || answer_vec.norm() == 0.0) {
    throw NumericError("fvqa_loss: zero vector input");
  }
  return 1.0 - cosine(query, answer_vec);
}

Vector fvqa_loss_backward(const Vector& query, const Vector& answer_vec) {
  const Scalar nq = query.norm();
  const Scalar ny = answer_vec.norm();
  if (nq == 0.0 || ny == 0.0) {
    throw NumericError("fvqa_loss_backward: zero vector input");
  }
  const Scalar c = query.dot(answer_vec) / (nq * ny);
  return -(answer_vec / (nq * ny) - c * query / (nq * nq));
}

namespace {

Vector uniform_vector(Index n, Scalar lo, Scalar hi, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) {
    v[i] = rng.uniform(lo, hi);
  }
  return v;
}

Matrix glorot(Index rows, Index cols, Rng& rng) {
  const Scalar a = std::sqrt(6.0 / static_cast<Scalar>(rows + cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = rng.uniform(-a, a);
    }
  }
  return m;
}

GruParams init_gru(Index state_dim, Index input_dim, Rng& rng) {
  GruParams p;
  p.wz = glorot(state_dim, input_dim, rng);
  p.wr = glorot(state_dim, input_dim, rng);
  p.wc = glorot(state_dim, input_dim, rng);
  p.uz = glorot(state_dim, state_dim, rng);
  p.ur = glorot(state_dim, state_dim, rng);
  p.uc = glorot(state_dim, state_dim, rng);
  p.bz = Vector::Zero(state_dim);
  p.br = Vector::Zero(state_dim);
  p.bc = Vector::Zero(state_dim);
  return p;
}

AffinePair init_head(Index in_dim, Index hidden, Index out_dim, Rng& rng) {
  AffinePair ap;
  ap.w1 = glorot(hidden, in_dim, rng);
  ap.b1 = Vector::Zero(hidden);
  ap.w2 = glorot(out_dim, hidden, rng);
  ap.b2 = Vector::Zero(out_dim);
  return ap;
}

Vector init_attention_vector(Index n, Rng& rng) {
  const Scalar a = std::sqrt(6.0 / static_cast<Scalar>(n + 1));
  return uniform_vector(n, -a, a, rng);
}

}  // namespace

QaModel init_qa_model(Index word_dim, Index state_dim, Index entity_dim, Index hidden_dim,
                      std::uint64_t seed) {
  QaModel model;
  model.word_dim = word_dim;
  model.state_dim = state_dim;
  model.entity_dim = entity_dim;
  model.hidden_dim = hidden_dim > 0 ? hidden_dim : 2 * entity_dim;
  Rng rng = Rng(seed).fork(0x9a);
  model.encoder = init_gru(state_dim, word_dim, rng);
  model.fusion.w_alpha_q = init_attention_vector(state_dim, rng);
  model.fusion.w_alpha_i = init_attention_vector(state_dim + entity_dim, rng);
  model.fusion.kvc = init_head(entity_dim + state_dim, model.hidden_dim, entity_dim, rng);
  model.fusion.kb = init_head(entity_dim + state_dim, model.hidden_dim, entity_dim, rng);
  model.gate.encoder = init_gru(state_dim, word_dim, rng);
  model.gate.w_g = init_attention_vector(state_dim, rng);
  model.gate.b_g = 0.0;
  return model;
}

QaForwardCache qa_forward(const TokenSet& tokens, const ImageAsKnowledge& image,
                          const GruParams& encoder, const FusionParams& fusion, Head head,
                          const EmbeddingTable& entities, const WordVectorTable& words,
                          const Vector* dropout_mask) {
  QaForwardCache cache;
  cache.inputs = question_inputs(tokens, words);
  cache.gru = gru_forward(cache.inputs, encoder);
  const Attention qa = attend_question(cache.gru.h.transpose(), fusion.w_alpha_q);
  cache.alpha_q = qa.weights;
  cache.a_q = qa.summary;
  const Attention ia = attend_image(cache.a_q, image, entities, fusion.w_alpha_i);
  cache.alpha_i = ia.weights;
  cache.a_i = ia.summary;
  cache.concepts = image.concepts;
  cache.head = head;
  const AffinePair& ap = head == Head::KVC ? fusion.kvc : fusion.kb;
  cache.x.resize(cache.a_i.size() + cache.a_q.size());
  cache.x << cache.a_i, cache.a_q;
  cache.z1 = ap.w1 * cache.x + ap.b1;
  cache.a1 = cache.z1.cwiseMax(0.0);
  if (dropout_mask) {
    cache.mask = *dropout_mask;
    cache.a1 = cache.a1.cwiseProduct(cache.mask);
  }
  cache.query = ap.w2 * cache.a1 + ap.b2;
  return cache;
}

QaGrad::QaGrad(const QaModel& model)
    : encoder(model.encoder),
      w_alpha_q(Vector::Zero(model.fusion.w_alpha_q.size())),
      w_alpha_i(Vector::Zero(model.fusion.w_alpha_i.size())) {
  auto zero_pair = [](const AffinePair& p) {
    AffinePair z;
    z.w1 = Matrix::Zero(p.w1.rows(), p.w1.cols());
    z.b1 = Vector::Zero(p.b1.size());
    z.w2 = Matrix::Zero(p.w2.rows(), p.w2.cols());
    z.b2 = Vector::Zero(p.b2.size());
    return z;
  };
  kvc = zero_pair(model.fusion.kvc);
  kb = zero_pair(model.fusion.kb);
}

void QaGrad::set_zero() {
  encoder.set_zero();
  w_alpha_q.setZero();
  w_alpha_i.setZero();
  for (AffinePair* p : {&kvc, &kb}) {
    p->w1.setZero();
    p->b1.setZero();
    p->w2.setZero();
    p->b2.setZero();
  }
}

void qa_backward(const GruParams& encoder, const FusionParams& fusion,
                 const EmbeddingTable& entities, const QaForwardCache& cache,
                 const Vector& dquery, QaGrad& grad) {
  const AffinePair& ap = cache.head == Head::KVC ? fusion.kvc : fusion.kb;
  AffinePair& gp = cache.head == Head::KVC ? grad.kvc : grad.kb;
  const Index ne = cache.a_i.size();
  const Index s = cache.a_q.size();

  // head
  gp.w2 += dquery * cache.a1.transpose();
  gp.b2 += dquery;
  Vector g_a1 = ap.w2.transpose() * dquery;
  if (cache.mask.size() > 0) {
    g_a1 = g_a1.cwiseProduct(cache.mask);
  }
  Vector g_z1 = g_a1;
  for (Index i = 0; i < g_z1.size(); ++i) {
    if (cache.z1[i] <= 0.0) g_z1[i] = 0.0;
  }
  gp.w1 += g_z1 * cache.x.transpose();
  gp.b1 += g_z1;
  const Vector g_x = ap.w1.transpose() * g_z1;
  const Vector g_ai = g_x.head(ne);
  Vector g_aq = g_x.tail(s);

  // image attention
  const Index m = cache.alpha_i.size();
  Vector g_alpha(m);
  for (Index j = 0; j < m; ++j) {
    g_alpha[j] = entities.entity_vectors.row(cache.concepts[static_cast<std::size_t>(j)].v).dot(g_ai);
  }
  const Scalar dot_i = cache.alpha_i.dot(g_alpha);
  const Vector g_logit_i = cache.alpha_i.cwiseProduct((g_alpha.array() - dot_i).matrix());
  for (Index j = 0; j < m; ++j) {
    grad.w_alpha_i.head(s) += g_logit_i[j] * cache.a_q;
    grad.w_alpha_i.tail(ne) +=
        g_logit_i[j] *
        entities.entity_vectors.row(cache.concepts[static_cast<std::size_t>(j)].v).transpose();
  }
  g_aq += g_logit_i.sum() * fusion.w_alpha_i.head(s);

  // question attention
  const Matrix states = cache.gru.h.transpose();  // T x s
  const Index T = states.rows();
  Vector g_alpha_q(T);
  for (Index t = 0; t < T; ++t) {
    g_alpha_q[t] = states.row(t).dot(g_aq);
  }
  const Scalar dot_q = cache.alpha_q.dot(g_alpha_q);
  const Vector g_logit_q = cache.alpha_q.cwiseProduct((g_alpha_q.array() - dot_q).matrix());
  grad.w_alpha_q += states.transpose() * g_logit_q;
  Matrix dh = Matrix::Zero(s, T);
  for (Index t = 0; t < T; ++t) {
    dh.col(t) = cache.alpha_q[t] * g_aq + g_logit_q[t] * fusion.w_alpha_q;
  }
  gru_backward(encoder, cache.gru, dh, grad.encoder);
}

GatedQuery gated_query(const TokenSet& tokens, const ImageAsKnowledge& image, const QaModel& model,
                       const EmbeddingTable& entities, const WordVectorTable& words) {
  GatedQuery out;
  out.gate_prob = gate_probability(tokens, words, model.gate);
  out.head = out.gate_prob >= 0.5 ? Head::KVC : Head::KB;
  const QaForwardCache cache =
      qa_forward(tokens, image, model.encoder, model.fusion, out.head, entities, words);
  out.query = cache.query;
  out.alpha_q = cache.alpha_q;
  out.alpha_i = cache.alpha_i;
  ++model.fusion_forwards;
  return out;
}

AnswerResult answer(const TokenSet& tokens, const ImageAsKnowledge& image, const QaModel& model,
                    const EmbeddingTable& entities, const WordVectorTable& words,
                    const std::vector<EntityId>* candidates) {
  std::vector<EntityId> all;
  if (!candidates) {
    all.reserve(static_cast<std::size_t>(entities.entity_vectors.rows()));
    for (Index i = 0; i < entities.entity_vectors.rows(); ++i) {
      all.push_back(EntityId(static_cast<std::int32_t>(i)));
    }
    candidates = &all;
  }
  if (candidates->empty()) {
    throw DataError("answer: empty candidate set");
  }
  const GatedQuery gq = gated_query(tokens, image, model, entities, words);
  AnswerResult result;
  result.head = gq.head;
  result.gate_prob = gq.gate_prob;
  result.alpha_q = gq.alpha_q;
  result.alpha_i = gq.alpha_i;
  Scalar best = -std::numeric_limits<Scalar>::infinity();
  EntityId best_id = (*candidates)[0];
  for (EntityId e : *candidates) {
    const Scalar s = cosine(gq.query, entities.entity_vectors.row(e.v).transpose());
    ++result.score_evals;
    if (s > best) {
      best = s;
      best_id = e;
    }
  }
  result.entity = best_id;
  return result;
}

void QaTrainConfig::validate() const {
  if (epochs < 0) throw DataError("qa config: epochs must be >= 0");
  if (batch_size <= 0) throw DataError("qa config: batch_size must be positive");
  if (!(learning_rate > 0)) throw DataError("qa config: learning_rate must be positive");
  if (decay_every <= 0) throw DataError("qa config: decay_every must be positive");
  if (dropout < 0 || dropout >= 1) throw DataError("qa config: dropout must be in [0,1)");
  if (weight_decay < 0) throw DataError("qa config: weight_decay must be >= 0");
  if (gate_epochs < 0) throw DataError("qa config: gate_epochs must be >= 0");
  if (!(gate_learning_rate > 0)) throw DataError("qa config: gate lr must be positive");
  if (state_dim < 1) throw DataError("qa config: state_dim must be >= 1");
}

namespace {

struct GateGrad {
  GruGrad encoder;
  Vector w_g;
  Scalar b_g = 0.0;
  explicit GateGrad(const GateParams& p) : encoder(p.encoder), w_g(Vector::Zero(p.w_g.size())) {}
  void set_zero() {
    encoder.set_zero();
    w_g.setZero();
    b_g = 0.0;
  }
};

void sgd_update_gru(GruParams& p, const GruGrad& g, Scalar lr) {
  p.wz -= lr * g.wz;
  p.wr -= lr * g.wr;
  p.wc -= lr * g.wc;
  p.uz -= lr * g.uz;
  p.ur -= lr * g.ur;
  p.uc -= lr * g.uc;
  p.bz -= lr * g.bz;
  p.br -= lr * g.br;
  p.bc -= lr * g.bc;
}

}  // namespace

QaModel train_qa(const QaDataset& data, const std::vector<int>& train_indices,
                 const EmbeddingTable& frozen, const WordVectorTable& words,
                 const QaTrainConfig& config) {
  config.validate();
  if (train_indices.empty()) {
    throw DataError("train_qa: empty training set");
  }
  const Index hidden = config.hidden_dim > 0 ? config.hidden_dim : 2 * frozen.entity_vectors.cols();
  QaModel model = init_qa_model(words.dim(), config.state_dim, frozen.entity_vectors.cols(),
                                hidden, config.seed);
  Rng shuffle_rng = Rng(config.seed).fork(0x5f);
  Rng dropout_rng = Rng(config.seed).fork(0xd0);

  QaGrad grad(model);
  std::vector<int> order(train_indices);
  const Scalar keep = 1.0 - config.dropout;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Scalar lr =
        config.learning_rate * std::pow(config.decay, epoch / config.decay_every);
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      grad.set_zero();
      Scalar batch_loss = 0.0;
      const Scalar inv = 1.0 / static_cast<Scalar>(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const QAInstance& inst = data.instances[static_cast<std::size_t>(order[k])];
        const ImageAsKnowledge& image = data.images[static_cast<std::size_t>(inst.image_index)];
        const Head head = inst.source == AnswerSource::Image ? Head::KVC : Head::KB;
        Vector mask(hidden);
        for (Index i = 0; i < hidden; ++i) {
          mask[i] = (config.dropout > 0 && dropout_rng.uniform01() < config.dropout)
                        ? 0.0
                        : 1.0 / keep;
        }
        const QaForwardCache cache =
            qa_forward(inst.question, image, model.encoder, model.fusion, head, frozen, words,
                       config.dropout > 0 ? &mask : nullptr);
        const Vector answer_vec = frozen.entity_vectors.row(inst.answer.v);
        if (cache.query.norm() == 0.0) {
          // dead ReLU corner; skip the instance rather than divide by zero
          continue;
        }
        batch_loss += fvqa_loss(cache.query, answer_vec);
        const Vector dquery = inv * fvqa_loss_backward(cache.query, answer_vec);
        qa_backward(model.encoder, model.fusion, frozen, cache, dquery, grad);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train_qa: non-finite loss at epoch " + std::to_string(epoch));
      }
      // decay on head weight matrices only
      const std::pair<AffinePair*, const AffinePair*> heads[] = {
          {&model.fusion.kvc, &grad.kvc}, {&model.fusion.kb, &grad.kb}};
      for (auto [p, g] : heads) {
        p->w1 -= lr * (g->w1 + config.weight_decay * p->w1);
        p->w2 -= lr * (g->w2 + config.weight_decay * p->w2);
        p->b1 -= lr * g->b1;
        p->b2 -= lr * g->b2;
      }
      model.fusion.w_alpha_q -= lr * grad.w_alpha_q;
      model.fusion.w_alpha_i -= lr * grad.w_alpha_i;
      sgd_update_gru(model.encoder, grad.encoder, lr);
    }
  }

  // gate: binary cross-entropy against the answer-source label
  GateGrad ggrad(model.gate);
  for (int epoch = 0; epoch < config.gate_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      ggrad.set_zero();
      const Scalar inv = 1.0 / static_cast<Scalar>(stop - start);
      Scalar batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const QAInstance& inst = data.instances[static_cast<std::size_t>(order[k])];
        const GruCache cache =
            gru_forward(question_inputs(inst.question, words), model.gate.encoder);
        const Vector final_state = cache.h.col(cache.h.cols() - 1);
        const Scalar u = model.gate.w_g.dot(final_state) + model.gate.b_g;
        const Scalar p = sigmoid(u);
        const Scalar y = inst.source == AnswerSource::Image ? 1.0 : 0.0;
        batch_loss += y > 0.5 ? softplus(-u) : softplus(u);
        const Scalar du = inv * (p - y);
        ggrad.w_g += du * final_state;
        ggrad.b_g += du;
        Matrix dh = Matrix::Zero(config.state_dim, cache.h.cols());
        dh.col(cache.h.cols() - 1) = du * model.gate.w_g;
        gru_backward(model.gate.encoder, cache, dh, ggrad.encoder);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train_qa: non-finite gate loss at epoch " + std::to_string(epoch));
      }
      model.gate.w_g -= config.gate_learning_rate * ggrad.w_g;
      model.gate.b_g -= config.gate_learning_rate * ggrad.b_g;
      sgd_update_gru(model.gate.encoder, ggrad.encoder, config.gate_learning_rate);
    }
  }
  return model;
}

// ---- checkpoint io ----

namespace {

void write_named(std::ostream& out, const std::string& name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      out << buf << (j + 1 == m.cols() ? '\n' : ' ');
    }
  }
}

Matrix read_named(std::istream& in, const std::string& expect) {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  if (!(in >> name >> rows >> cols) || name != expect) {
    throw DataError("qa checkpoint: expected section " + expect);
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (!(in >> m(i, j))) {
        throw DataError("qa checkpoint: truncated section " + expect);
      }
    }
  }
  return m;
}

void write_gru(std::ostream& out, const std::string& prefix, const GruParams& p) {
  write_named(out, prefix + ".wz", p.wz);
  write_named(out, prefix + ".wr", p.wr);
  write_named(out, prefix + ".wc", p.wc);
  write_named(out, prefix + ".uz", p.uz);
  write_named(out, prefix + ".ur", p.ur);
  write_named(out, prefix + ".uc", p.uc);
  write_named(out, prefix + ".bz", p.bz.transpose());
  write_named(out, prefix + ".br", p.br.transpose());
  write_named(out, prefix + ".bc", p.bc.transpose());
}

GruParams read_gru(std::istream& in, const std::string& prefix) {
  GruParams p;
  p.wz = read_named(in, prefix + ".wz");
  p.wr = read_named(in, prefix + ".wr");
  p.wc = read_named(in, prefix + ".wc");
  p.uz = read_named(in, prefix + ".uz");
  p.ur = read_named(in, prefix + ".ur");
  p.uc = read_named(in, prefix + ".uc");
  p.bz = read_named(in, prefix + ".bz").row(0);
  p.br = read_named(in, prefix + ".br").row(0);
  p.bc = read_named(in, prefix + ".bc").row(0);
  return p;
}

void write_head(std::ostream& out, const std::string& prefix, const AffinePair& ap) {
  write_named(out, prefix + ".w1", ap.w1);
  write_named(out, prefix + ".b1", ap.b1.transpose());
  write_named(out, prefix + ".w2", ap.w2);
  write_named(out, prefix + ".b2", ap.b2.transpose());
}

AffinePair read_head(std::istream& in, const std::string& prefix) {
  AffinePair ap;
  ap.w1 = read_named(in, prefix + ".w1");
  ap.b1 = read_named(in, prefix + ".b1").row(0);
  ap.w2 = read_named(in, prefix + ".w2");
  ap.b2 = read_named(in, prefix + ".b2").row(0);
  return ap;
}

}  // namespace

void save_qa_checkpoint(const QaModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("save_qa_checkpoint: cannot open " + path);
  }
  out << "qa " << model.word_dim << ' ' << model.state_dim << ' ' << model.entity_dim << ' '
      << model.hidden_dim << '\n';
  write_gru(out, "encoder", model.encoder);
  write_named(out, "w_alpha_q", model.fusion.w_alpha_q.transpose());
  write_named(out, "w_alpha_i", model.fusion.w_alpha_i.transpose());
  write_head(out, "kvc", model.fusion.kvc);
  write_head(out, "kb", model.fusion.kb);
  write_gru(out, "gate", model.gate.encoder);
  write_named(out, "w_g", model.gate.w_g.transpose());
  Matrix bg(1, 1);
  bg(0, 0) = model.gate.b_g;
  write_named(out, "b_g", bg);
}

QaModel load_qa_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("load_qa_checkpoint: cannot open " + path);
  }
  std::string magic;
  QaModel model;
  if (!(in >> magic >> model.word_dim >> model.state_dim >> model.entity_dim >>
        model.hidden_dim) ||
      magic != "qa") {
    throw DataError("load_qa_checkpoint: bad header");
  }
  model.encoder = read_gru(in, "encoder");
  model.fusion.w_alpha_q = read_named(in, "w_alpha_q").row(0);
  model.fusion.w_alpha_i = read_named(in, "w_alpha_i").row(0);
  model.fusion.kvc = read_head(in, "kvc");
  model.fusion.kb = read_head(in, "kb");
  model.gate.encoder = read_gru(in, "gate");
  model.gate.w_g = read_named(in, "w_g").row(0);
  model.gate.b_g = read_named(in, "b_g")(0, 0);
  return model;
}

}  // namespace kgqa
