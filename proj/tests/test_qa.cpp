#include <doctest.h>

#include <cmath>

#include "kgqa/qa.hpp"
#include "test_util.hpp"

using namespace kgqa;
using testutil::finite_difference_check;
using testutil::qa_grad_views;
using testutil::qa_params;
using testutil::TempDir;
using testutil::write_file;

namespace {

WordVectorTable toy_words(Index dim, std::uint64_t seed,
                          const std::vector<std::string>& extra = {}) {
  std::vector<std::string> tokens = {"which", "object", "image", "graph", "red",
                                     "blue",  "green",  "bird",  "fish",  "tree"};
  tokens.insert(tokens.end(), extra.begin(), extra.end());
  Rng rng(seed);
  Matrix vectors(static_cast<Index>(tokens.size()), dim);
  for (Index i = 0; i < vectors.rows(); ++i) {
    for (Index d = 0; d < dim; ++d) {
      vectors(i, d) = rng.uniform(-1, 1);
    }
  }
  return WordVectorTable(tokens, vectors);
}

EmbeddingTable toy_entities(Index n, Index dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingTable t;
  t.dim = dim;
  t.entity_vectors.resize(n, dim);
  for (Index i = 0; i < n; ++i) {
    for (Index d = 0; d < dim; ++d) {
      t.entity_vectors(i, d) = rng.uniform(-1, 1);
    }
  }
  t.relation_params.resize(0, dim);
  return t;
}

}  // namespace

TEST_CASE("encode_question: zero parameters give all-zero states") {
  const WordVectorTable words = toy_words(3, 1);
  GruParams p;
  p.wz = Matrix::Zero(4, 3);
  p.wr = Matrix::Zero(4, 3);
  p.wc = Matrix::Zero(4, 3);
  p.uz = Matrix::Zero(4, 4);
  p.ur = Matrix::Zero(4, 4);
  p.uc = Matrix::Zero(4, 4);
  p.bz = Vector::Zero(4);
  p.br = Vector::Zero(4);
  p.bc = Vector::Zero(4);
  const Matrix states = encode_question({"red"}, words, p);
  CHECK(states.rows() == 1);
  CHECK(states.cols() == 4);
  CHECK(states.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode_question: repeated tokens produce different states") {
  const WordVectorTable words = toy_words(3, 2);
  const QaModel model = init_qa_model(3, 4, 4, 8, 7);
  const Matrix states = encode_question({"red", "red"}, words, model.encoder);
  CHECK((states.row(0) - states.row(1)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("encode_question: token order changes the final state") {
  const WordVectorTable words = toy_words(3, 3);
  const QaModel model = init_qa_model(3, 4, 4, 8, 8);
  const Matrix ab = encode_question({"red", "blue"}, words, model.encoder);
  const Matrix ba = encode_question({"blue", "red"}, words, model.encoder);
  CHECK((ab.row(1) - ba.row(1)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("encode_question rejects an empty question") {
  const WordVectorTable words = toy_words(3, 1);
  const QaModel model = init_qa_model(3, 4, 4, 8, 7);
  CHECK_THROWS_AS(encode_question({}, words, model.encoder), DataError);
}

TEST_CASE("attend_question: singleton, symmetry, zero projection") {
  Matrix states(1, 3);
  states << 1, 2, 3;
  Vector w = Vector::Ones(3);
  const Attention single = attend_question(states, w);
  CHECK(single.weights.size() == 1);
  CHECK(single.weights[0] == doctest::Approx(1.0));
  CHECK((single.summary - states.row(0).transpose()).cwiseAbs().maxCoeff() == 0.0);

  Matrix two(2, 3);
  two << 1, 0, 2, 3, 5, 0;  // both rows project to 3 under w = (1,0,1)
  Vector w2(3);
  w2 << 1, 0, 1;
  const Attention sym = attend_question(two, w2);
  CHECK(sym.weights[0] == doctest::Approx(0.5));
  CHECK((sym.summary - 0.5 * (two.row(0) + two.row(1)).transpose()).cwiseAbs().maxCoeff() <=
        1e-15);

  const Attention uniform = attend_question(two, Vector::Zero(3));
  CHECK(uniform.weights[0] == doctest::Approx(0.5));
  CHECK(uniform.weights[1] == doctest::Approx(0.5));
}

TEST_CASE("attend_image: singleton and symmetric cases, weights sum to 1") {
  const EmbeddingTable entities = toy_entities(5, 4, 9);
  Vector a_q = Vector::Ones(3);
  Vector w = Vector::Zero(3 + 4);
  ImageAsKnowledge img{"i", {EntityId(2)}};
  const Attention single = attend_image(a_q, img, entities, w);
  CHECK((single.summary - entities.entity_vectors.row(2).transpose()).cwiseAbs().maxCoeff() ==
        0.0);

  ImageAsKnowledge img2{"i", {EntityId(1), EntityId(3)}};
  const Attention pair = attend_image(a_q, img2, entities, w);  // zero logits -> equal
  CHECK(pair.weights[0] == doctest::Approx(0.5));
  const Vector mean =
      0.5 * (entities.entity_vectors.row(1) + entities.entity_vectors.row(3)).transpose();
  CHECK((pair.summary - mean).cwiseAbs().maxCoeff() <= 1e-15);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Vector wr(7), aq(3);
    for (Index i = 0; i < 7; ++i) wr[i] = rng.uniform(-2, 2);
    for (Index i = 0; i < 3; ++i) aq[i] = rng.uniform(-2, 2);
    ImageAsKnowledge im{"i", {EntityId(0), EntityId(2), EntityId(4)}};
    const Attention att = attend_image(aq, im, entities, wr);
    CHECK(std::abs(att.weights.sum() - 1.0) <= 1e-9);
    for (Index j = 0; j < att.weights.size(); ++j) {
      CHECK(att.weights[j] >= 0.0);
    }
  }
  CHECK_THROWS_AS(attend_image(a_q, ImageAsKnowledge{"empty", {}}, entities, w), DataError);
}

TEST_CASE("image summary stays inside the concept hull, coordinatewise") {
  const EmbeddingTable entities = toy_entities(6, 4, 10);
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Vector w(3 + 4), aq(3);
    for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-3, 3);
    for (Index i = 0; i < 3; ++i) aq[i] = rng.uniform(-3, 3);
    ImageAsKnowledge img{"i", {EntityId(0), EntityId(1), EntityId(5)}};
    const Attention att = attend_image(aq, img, entities, w);
    for (Index d = 0; d < 4; ++d) {
      double lo = 1e30, hi = -1e30;
      for (EntityId c : img.concepts) {
        lo = std::min(lo, entities.entity_vectors(c.v, d));
        hi = std::max(hi, entities.entity_vectors(c.v, d));
      }
      CHECK(att.summary[d] >= lo - 1e-12);
      CHECK(att.summary[d] <= hi + 1e-12);
    }
  }
}

TEST_CASE("fuse: zero parameters give a zero query") {
  FusionParams fp;
  fp.w_alpha_q = Vector::Zero(3);
  fp.w_alpha_i = Vector::Zero(7);
  fp.kvc.w1 = Matrix::Zero(6, 7);
  fp.kvc.b1 = Vector::Zero(6);
  fp.kvc.w2 = Matrix::Zero(4, 6);
  fp.kvc.b2 = Vector::Zero(4);
  fp.kb = fp.kvc;
  const Vector q = fuse(Vector::Ones(4), Vector::Ones(3), Head::KVC, fp);
  CHECK(q.norm() == 0.0);
}

TEST_CASE("fuse: identity-shaped head passes the rectified input through") {
  FusionParams fp;
  const Index n = 4;
  fp.kvc.w1 = Matrix::Identity(n, n);
  fp.kvc.b1 = Vector::Zero(n);
  fp.kvc.w2 = Matrix::Identity(n, n);
  fp.kvc.b2 = Vector::Zero(n);
  fp.kb = fp.kvc;
  Vector a_i(2), a_q(2);
  a_i << 1.5, -2.0;
  a_q << -0.5, 3.0;
  const Vector q = fuse(a_i, a_q, Head::KVC, fp);
  CHECK(q[0] == doctest::Approx(1.5));
  CHECK(q[1] == doctest::Approx(0.0));
  CHECK(q[2] == doctest::Approx(0.0));
  CHECK(q[3] == doctest::Approx(3.0));
}

TEST_CASE("fuse: KVC and KB heads differ under random parameters") {
  const QaModel model = init_qa_model(3, 4, 4, 8, 12);
  Vector a_i(4), a_q(4);
  a_i << 0.3, -0.7, 1.1, 0.2;
  a_q << -0.2, 0.9, 0.4, -1.0;
  const Vector kvc = fuse(a_i, a_q, Head::KVC, model.fusion);
  const Vector kb = fuse(a_i, a_q, Head::KB, model.fusion);
  CHECK((kvc - kb).cwiseAbs().maxCoeff() > 1e-9);
  CHECK_THROWS_AS(fuse(Vector::Ones(9), a_q, Head::KVC, model.fusion), DataError);
}

TEST_CASE("gate: zero weights give exactly 0.5; large bias saturates") {
  const WordVectorTable words = toy_words(3, 5);
  GateParams gate;
  gate.encoder = init_qa_model(3, 4, 4, 8, 3).gate.encoder;
  gate.w_g = Vector::Zero(4);
  gate.b_g = 0.0;
  CHECK(gate_probability({"red", "bird"}, words, gate) == doctest::Approx(0.5));
  gate.b_g = 50.0;
  CHECK(gate_probability({"red", "bird"}, words, gate) == doctest::Approx(1.0));
  gate.b_g = -50.0;
  CHECK(gate_probability({"red", "bird"}, words, gate) == doctest::Approx(0.0));
}

TEST_CASE("fvqa_loss: identity, orthogonal, antipodal, zero input") {
  Vector a(3), b(3);
  a << 1, 2, 3;
  CHECK(fvqa_loss(a, a) == doctest::Approx(0.0));
  b << -2, 1, 0;
  CHECK(fvqa_loss(a, b) == doctest::Approx(1.0));
  CHECK(fvqa_loss(a, (-a).eval()) == doctest::Approx(2.0));
  CHECK_THROWS_AS(fvqa_loss(Vector::Zero(3), a), NumericError);
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    Vector u(4), v(4);
    for (Index i = 0; i < 4; ++i) {
      u[i] = rng.uniform(-2, 2);
      v[i] = rng.uniform(-2, 2);
    }
    if (u.norm() == 0 || v.norm() == 0) continue;
    const Scalar loss = fvqa_loss(u, v);
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0);
  }
}

TEST_CASE("answer: singleton candidate set and exact-match retrieval") {
  const Index dim = 4;
  const WordVectorTable words = toy_words(3, 7);
  EmbeddingTable entities = toy_entities(6, dim, 13);
  for (Index i = 0; i < 6; ++i) {
    entities.entity_vectors.row(i).normalize();
  }
  QaModel model = init_qa_model(3, 4, dim, 8, 21);
  const TokenSet q = {"which", "object", "image"};
  ImageAsKnowledge img{"i", {EntityId(0), EntityId(1)}};

  std::vector<EntityId> only = {EntityId(3)};
  const AnswerResult res = answer(q, img, model, entities, words, &only);
  CHECK(res.entity == EntityId(3));
  CHECK(res.score_evals == 1);

  // plant the query: make one entity equal the produced fusion output
  const GatedQuery gq = gated_query(q, img, model, entities, words);
  REQUIRE(gq.query.norm() > 0);
  entities.entity_vectors.row(5) = gq.query.normalized().transpose();
  const AnswerResult hit = answer(q, img, model, entities, words);
  CHECK(hit.entity == EntityId(5));
  CHECK(hit.score_evals == 6);

  std::vector<EntityId> none;
  CHECK_THROWS_AS(answer(q, img, model, entities, words, &none), DataError);
}

TEST_CASE("argmax is invariant under strictly monotone transforms") {
  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(10));
    Vector s(n);
    for (Index i = 0; i < n; ++i) {
      s[i] = rng.uniform(-1, 1);
    }
    Index best = 0;
    for (Index i = 1; i < n; ++i) {
      if (s[i] > s[best]) best = i;
    }
    const Vector t = (3.0 * s.array() + 2.0).matrix();
    Index best_t = 0;
    for (Index i = 1; i < n; ++i) {
      if (t[i] > t[best_t]) best_t = i;
    }
    CHECK(best == best_t);
  }
}

// ---- full-path gradient check ----

namespace {

struct QaCheckSetup {
  WordVectorTable words;
  EmbeddingTable entities;
  QaModel model;
  TokenSet question;
  ImageAsKnowledge image;
  Vector answer_vec;
};

QaCheckSetup make_setup(std::uint64_t seed, Head head) {
  const Index word_dim = 3;
  const Index state_dim = 4;
  const Index entity_dim = 5;
  QaCheckSetup s{toy_words(word_dim, seed),
                 toy_entities(6, entity_dim, seed + 1),
                 init_qa_model(word_dim, state_dim, entity_dim, 6, seed + 2),
                 {"which", "red", "bird", "image"},
                 {"img", {EntityId(0), EntityId(2), EntityId(4)}},
                 Vector()};
  Rng rng(seed + 3);
  s.answer_vec.resize(entity_dim);
  for (Index i = 0; i < entity_dim; ++i) {
    s.answer_vec[i] = rng.uniform(-1, 1);
  }
  (void)head;
  return s;
}

/// The finite-difference step perturbs ReLU preactivations, and the cosine
/// loss has curvature ~ 1/|q|^3; keep margins so the loss stays smooth and
/// well-conditioned inside the probe ball.
bool relu_margin_ok(const QaCheckSetup& s, Head head, double margin) {
  const QaForwardCache cache = qa_forward(s.question, s.image, s.model.encoder, s.model.fusion,
                                          head, s.entities, s.words);
  if (cache.query.norm() < 0.3) {
    return false;
  }
  return cache.z1.cwiseAbs().minCoeff() > margin;
}

double check_qa_gradient(std::uint64_t seed, Head head) {
  QaCheckSetup s = make_setup(seed, head);
  for (std::uint64_t bump = 0; !relu_margin_ok(s, head, 2e-2) && bump < 50; ++bump) {
    s = make_setup(seed + 1000 * (bump + 1), head);
  }
  REQUIRE(relu_margin_ok(s, head, 2e-2));
  QaGrad grad(s.model);
  const QaForwardCache cache = qa_forward(s.question, s.image, s.model.encoder, s.model.fusion,
                                          head, s.entities, s.words);
  qa_backward(s.model.encoder, s.model.fusion, s.entities, cache,
              fvqa_loss_backward(cache.query, s.answer_vec), grad);
  auto loss_fn = [&]() {
    const QaForwardCache c = qa_forward(s.question, s.image, s.model.encoder, s.model.fusion,
                                        head, s.entities, s.words);
    return fvqa_loss(c.query, s.answer_vec);
  };
  return finite_difference_check(qa_params(s.model), qa_grad_views(grad), loss_fn);
}

}  // namespace

TEST_CASE("gradient check: encoder -> attention -> fusion -> cosine loss") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CHECK(check_qa_gradient(seed, Head::KVC) <= 1e-4);
    CHECK(check_qa_gradient(seed, Head::KB) <= 1e-4);
  }
}

TEST_CASE("gradient check: gate path with binary cross-entropy") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const WordVectorTable words = toy_words(3, seed);
    QaModel model = init_qa_model(3, 4, 5, 6, seed + 40);
    const TokenSet q = {"red", "graph", "fish"};
    const double label = seed % 2 ? 1.0 : 0.0;

    GruGrad ggrad(model.gate.encoder);
    Vector gw = Vector::Zero(4);
    double gb = 0.0;
    {
      Matrix inputs = Matrix::Zero(3, 3);
      for (std::size_t t = 0; t < q.size(); ++t) {
        if (auto row = words.find(q[t])) {
          inputs.col(static_cast<Index>(t)) = words.vector(*row);
        }
      }
      const GruCache cache = gru_forward(inputs, model.gate.encoder);
      const Vector final_state = cache.h.col(2);
      const double u = model.gate.w_g.dot(final_state) + model.gate.b_g;
      const double du = sigmoid(u) - label;
      gw = du * final_state;
      gb = du;
      Matrix dh = Matrix::Zero(4, 3);
      dh.col(2) = du * model.gate.w_g;
      gru_backward(model.gate.encoder, cache, dh, ggrad);
    }
    std::vector<testutil::ParamView> params;
    testutil::gru_param_views(model.gate.encoder, "gate", params);
    params.push_back({model.gate.w_g.data(), 4, "w_g"});
    params.push_back({&model.gate.b_g, 1, "b_g"});
    std::vector<testutil::ParamView> grads;
    testutil::gru_grad_views(ggrad, "gate", grads);
    grads.push_back({gw.data(), 4, "w_g"});
    grads.push_back({&gb, 1, "b_g"});
    auto loss_fn = [&]() {
      const double p = gate_probability(q, words, model.gate);
      return label > 0.5 ? -std::log(p) : -std::log(1.0 - p);
    };
    CHECK(finite_difference_check(params, grads, loss_fn) <= 1e-4);
  }
}

// ---- training behavior ----

namespace {

QaDataset toy_dataset(const WordVectorTable& words, Index n_entities, std::uint64_t seed) {
  (void)words;
  QaDataset data;
  Rng rng(seed);
  for (int i = 0; i < 4; ++i) {
    ImageAsKnowledge img;
    img.image_id = "img" + std::to_string(i);
    img.concepts = {EntityId(static_cast<std::int32_t>(rng.below(n_entities))),
                    EntityId(static_cast<std::int32_t>(rng.below(n_entities)))};
    data.images.push_back(img);
    data.image_index.emplace(img.image_id, i);
  }
  const std::vector<TokenSet> questions = {{"which", "object", "image", "red"},
                                           {"what", "graph", "blue"},
                                           {"which", "image", "bird"},
                                           {"what", "graph", "fish"}};
  for (int i = 0; i < 12; ++i) {
    QAInstance inst;
    inst.question = questions[static_cast<std::size_t>(i) % questions.size()];
    inst.image_index = i % 4;
    const auto& concepts = data.images[static_cast<std::size_t>(inst.image_index)].concepts;
    inst.source = (i % 4 < 2) ? AnswerSource::Image : AnswerSource::Kg;
    inst.answer = inst.source == AnswerSource::Image
                      ? concepts[rng.below(concepts.size())]
                      : EntityId(static_cast<std::int32_t>(rng.below(n_entities)));
    inst.fact = {concepts[0], RelationId(0), inst.answer};
    data.instances.push_back(inst);
  }
  return data;
}

}  // namespace

TEST_CASE("train_qa: zero epochs returns the initialization") {
  const WordVectorTable words = toy_words(3, 15, {"what"});
  const EmbeddingTable entities = toy_entities(8, 4, 16);
  const QaDataset data = toy_dataset(words, 8, 17);
  QaTrainConfig cfg;
  cfg.epochs = 0;
  cfg.gate_epochs = 0;
  cfg.state_dim = 4;
  cfg.seed = 3;
  std::vector<int> idx = {0, 1, 2, 3, 4, 5};
  const QaModel trained = train_qa(data, idx, entities, words, cfg);
  const QaModel fresh = init_qa_model(3, 4, 4, 8, 3);
  CHECK((trained.encoder.wz - fresh.encoder.wz).cwiseAbs().maxCoeff() == 0.0);
  CHECK((trained.fusion.kvc.w1 - fresh.fusion.kvc.w1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((trained.gate.w_g - fresh.gate.w_g).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("train_qa is bit-reproducible, dropout included") {
  const WordVectorTable words = toy_words(3, 18, {"what"});
  const EmbeddingTable entities = toy_entities(8, 4, 19);
  const QaDataset data = toy_dataset(words, 8, 20);
  QaTrainConfig cfg;
  cfg.epochs = 6;
  cfg.gate_epochs = 2;
  cfg.state_dim = 4;
  cfg.dropout = 0.3;
  cfg.seed = 4;
  std::vector<int> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  const QaModel a = train_qa(data, idx, entities, words, cfg);
  const QaModel b = train_qa(data, idx, entities, words, cfg);
  CHECK((a.encoder.wz - b.encoder.wz).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.fusion.kvc.w1 - b.fusion.kvc.w1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.fusion.kb.w2 - b.fusion.kb.w2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.gate.w_g - b.gate.w_g).cwiseAbs().maxCoeff() == 0.0);
  // and training moved the parameters
  const QaModel fresh = init_qa_model(3, 4, 4, 8, 4);
  CHECK((a.fusion.kvc.w1 - fresh.fusion.kvc.w1).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("dropout is inference-off: forward passes are deterministic") {
  const WordVectorTable words = toy_words(3, 22);
  const EmbeddingTable entities = toy_entities(6, 4, 23);
  QaModel model = init_qa_model(3, 4, 4, 8, 24);
  const TokenSet q = {"red", "image"};
  ImageAsKnowledge img{"i", {EntityId(1), EntityId(2)}};
  const GatedQuery a = gated_query(q, img, model, entities, words);
  const GatedQuery b = gated_query(q, img, model, entities, words);
  CHECK((a.query - b.query).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("qa checkpoints round-trip bit-exactly") {
  TempDir tmp("qa_ckpt");
  const QaModel m = init_qa_model(3, 4, 5, 7, 77);
  save_qa_checkpoint(m, tmp.path("qa.ckpt"));
  const QaModel back = load_qa_checkpoint(tmp.path("qa.ckpt"));
  CHECK(back.word_dim == 3);
  CHECK(back.hidden_dim == 7);
  CHECK((back.encoder.uc - m.encoder.uc).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.fusion.w_alpha_i - m.fusion.w_alpha_i).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.fusion.kb.w2 - m.fusion.kb.w2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.gate.w_g - m.gate.w_g).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.gate.b_g == m.gate.b_g);
}

TEST_CASE("qa dataset loader enforces the image-answer invariant") {
  TempDir tmp("qa_data");
  write_file(tmp.path("kg.tsv"), "bird\tr\ttree\nfish\tr\ttree\n");
  const KnowledgeGraph kg = load_kg(tmp.path("kg.tsv"));
  write_file(tmp.path("images.tsv"), "img0\tbird|tree\nimg1\tfish|unknown_thing\n");
  const auto images = load_images(tmp.path("images.tsv"), kg);
  REQUIRE(images.size() == 2);
  CHECK(images[1].concepts.size() == 1);  // unresolvable concept dropped

  write_file(tmp.path("qa_ok.tsv"), "which bird\timg0\tbird\timage\tbird\tr\ttree\n");
  const QaDataset ok = load_qa_dataset(tmp.path("images.tsv"), tmp.path("qa_ok.tsv"), kg);
  CHECK(ok.instances.size() == 1);
  CHECK(ok.instances[0].source == AnswerSource::Image);

  write_file(tmp.path("qa_bad.tsv"), "which fish\timg0\tfish\timage\tfish\tr\ttree\n");
  CHECK_THROWS_AS(load_qa_dataset(tmp.path("images.tsv"), tmp.path("qa_bad.tsv"), kg), DataError);
}
