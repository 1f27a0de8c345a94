#include "kgqa/model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "kgqa/rng.hpp"

namespace kgqa {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::TransE:
      return "transe";
    case ModelKind::RotatE:
      return "rotate";
    case ModelKind::Ermlp:
      return "ermlp";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "transe") return ModelKind::TransE;
  if (s == "rotate") return ModelKind::RotatE;
  if (s == "ermlp") return ModelKind::Ermlp;
  throw DataError("unknown model kind: " + s);
}

Index relation_dim(ModelKind kind, Index entity_dim) {
  return kind == ModelKind::RotatE ? entity_dim / 2 : entity_dim;
}

namespace {

Matrix uniform_matrix(Index rows, Index cols, Scalar lo, Scalar hi, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = rng.uniform(lo, hi);
    }
  }
  return m;
}

Matrix glorot_matrix(Index rows, Index cols, Rng& rng) {
  const Scalar a = std::sqrt(6.0 / static_cast<Scalar>(rows + cols));
  return uniform_matrix(rows, cols, -a, a, rng);
}

}  // namespace

ScoringModel init_model(ModelKind kind, Index n_entities, Index n_relations, Index dim,
                        Scalar gamma, std::uint64_t seed) {
  if (kind == ModelKind::RotatE && dim % 2 != 0) {
    throw DataError("RotatE requires an even embedding dimension");
  }
  if (kind != ModelKind::Ermlp && !(gamma > 0)) {
    throw DataError("distance models require gamma > 0");
  }
  ScoringModel model;
  model.kind = kind;
  model.gamma = gamma;
  model.table.dim = dim;
  Rng rng = Rng(seed).fork(0x1417);
  const Scalar bound = 6.0 / std::sqrt(static_cast<Scalar>(dim));
  model.table.entity_vectors = uniform_matrix(n_entities, dim, -bound, bound, rng);
  if (kind == ModelKind::RotatE) {
    const Scalar pi = std::numbers::pi_v<Scalar>;
    model.table.relation_params = uniform_matrix(n_relations, dim / 2, -pi, pi, rng);
  } else {
    model.table.relation_params = uniform_matrix(n_relations, dim, -bound, bound, rng);
  }
  if (kind == ModelKind::Ermlp) {
    ErmlpWeights w;
    w.w1 = glorot_matrix(2 * dim, 3 * dim, rng);
    w.b1 = Vector::Zero(2 * dim);
    w.w2 = glorot_matrix(dim, 2 * dim, rng);
    w.b2 = Vector::Zero(dim);
    w.w3 = glorot_matrix(dim, 1, rng);
    w.b3 = 0.0;
    model.ermlp = std::move(w);
  }
  return model;
}

Vector rotate_pairs(const Vector& entity, const Vector& phases) {
  const Index pairs = phases.size();
  Vector out(2 * pairs);
  for (Index k = 0; k < pairs; ++k) {
    const Scalar a = entity[2 * k];
    const Scalar b = entity[2 * k + 1];
    const Scalar c = std::cos(phases[k]);
    const Scalar s = std::sin(phases[k]);
    out[2 * k] = a * c - b * s;
    out[2 * k + 1] = a * s + b * c;
  }
  return out;
}

Scalar score(const ScoringModel& model, EntityId h, RelationId r, EntityId t) {
  const auto& E = model.table.entity_vectors;
  const auto& R = model.table.relation_params;
  switch (model.kind) {
    case ModelKind::TransE: {
      const Scalar d = (E.row(h.v) + R.row(r.v) - E.row(t.v)).norm();
      return model.gamma - d;
    }
    case ModelKind::RotatE: {
      const Vector rotated = rotate_pairs(E.row(h.v), R.row(r.v));
      const Scalar d = (rotated - E.row(t.v).transpose()).norm();
      return model.gamma - d;
    }
    case ModelKind::Ermlp: {
      const ErmlpWeights& w = *model.ermlp;
      const Index n = model.table.dim;
      Vector x(3 * n);
      x << E.row(h.v).transpose(), R.row(r.v).transpose(), E.row(t.v).transpose();
      const Vector a1 = (w.w1 * x + w.b1).cwiseMax(0.0);
      const Vector a2 = (w.w2 * a1 + w.b2).cwiseMax(0.0);
      return w.w3.dot(a2) + w.b3;
    }
  }
  return 0.0;
}

ModelGrad::ModelGrad(const ScoringModel& model) {
  entity = Matrix::Zero(model.table.entity_vectors.rows(), model.table.entity_vectors.cols());
  relation = Matrix::Zero(model.table.relation_params.rows(), model.table.relation_params.cols());
  if (model.ermlp) {
    ermlp.w1 = Matrix::Zero(model.ermlp->w1.rows(), model.ermlp->w1.cols());
    ermlp.b1 = Vector::Zero(model.ermlp->b1.size());
    ermlp.w2 = Matrix::Zero(model.ermlp->w2.rows(), model.ermlp->w2.cols());
    ermlp.b2 = Vector::Zero(model.ermlp->b2.size());
    ermlp.w3 = Vector::Zero(model.ermlp->w3.size());
    ermlp.b3 = 0.0;
  }
}

void ModelGrad::set_zero() {
  entity.setZero();
  relation.setZero();
  if (ermlp.w1.size() > 0) {
    ermlp.w1.setZero();
    ermlp.b1.setZero();
    ermlp.w2.setZero();
    ermlp.b2.setZero();
    ermlp.w3.setZero();
    ermlp.b3 = 0.0;
  }
}

void accumulate_score_grad(const ScoringModel& model, const Triple& f, Scalar upstream,
                           ModelGrad& grad) {
  const auto& E = model.table.entity_vectors;
  const auto& R = model.table.relation_params;
  const Index h = f.head.v;
  const Index r = f.rel.v;
  const Index t = f.tail.v;
  switch (model.kind) {
    case ModelKind::TransE: {
      Vector d = E.row(h) + R.row(r) - E.row(t);
      const Scalar norm = d.norm();
      if (norm <= 0.0) {
        return;  // score kink; subgradient 0
      }
      d *= upstream * (-1.0 / norm);  // d(score)/d(h) = -d/|d|
      grad.entity.row(h) += d.transpose();
      grad.relation.row(r) += d.transpose();
      grad.entity.row(t) -= d.transpose();
      return;
    }
    case ModelKind::RotatE: {
      const Vector rotated = rotate_pairs(E.row(h), R.row(r));
      const Vector diff = rotated - E.row(t).transpose();
      const Scalar norm = diff.norm();
      if (norm <= 0.0) {
        return;
      }
      const Index pairs = R.cols();
      for (Index k = 0; k < pairs; ++k) {
        const Scalar c = std::cos(R(r, k));
        const Scalar s = std::sin(R(r, k));
        // d(score)/d(u_k), d(score)/d(v_k) where (u,v) = h o r
        const Scalar gre = upstream * (-diff[2 * k] / norm);
        const Scalar gim = upstream * (-diff[2 * k + 1] / norm);
        grad.entity(h, 2 * k) += gre * c + gim * s;
        grad.entity(h, 2 * k + 1) += -gre * s + gim * c;
        grad.relation(r, k) += gre * (-rotated[2 * k + 1]) + gim * rotated[2 * k];
        grad.entity(t, 2 * k) += -gre;
        grad.entity(t, 2 * k + 1) += -gim;
      }
      return;
    }
    case ModelKind::Ermlp: {
      const ErmlpWeights& w = *model.ermlp;
      const Index n = model.table.dim;
      Vector x(3 * n);
      x << E.row(h).transpose(), R.row(r).transpose(), E.row(t).transpose();
      const Vector z1 = w.w1 * x + w.b1;
      const Vector a1 = z1.cwiseMax(0.0);
      const Vector z2 = w.w2 * a1 + w.b2;
      const Vector a2 = z2.cwiseMax(0.0);
      grad.ermlp.w3 += upstream * a2;
      grad.ermlp.b3 += upstream;
      Vector d2 = upstream * w.w3;
      for (Index i = 0; i < d2.size(); ++i) {
        if (z2[i] <= 0.0) d2[i] = 0.0;
      }
      grad.ermlp.w2 += d2 * a1.transpose();
      grad.ermlp.b2 += d2;
      Vector d1 = w.w2.transpose() * d2;
      for (Index i = 0; i < d1.size(); ++i) {
        if (z1[i] <= 0.0) d1[i] = 0.0;
      }
      grad.ermlp.w1 += d1 * x.transpose();
      grad.ermlp.b1 += d1;
      const Vector dx = w.w1.transpose() * d1;
      grad.entity.row(h) += dx.segment(0, n).transpose();
      grad.relation.row(r) += dx.segment(n, n).transpose();
      grad.entity.row(t) += dx.segment(2 * n, n).transpose();
      return;
    }
  }
}

namespace {

void write_row(std::ostream& out, const Eigen::Ref<const Vector>& v) {
  char buf[32];
  for (Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    out << buf << (i + 1 == v.size() ? '\n' : ' ');
  }
}

void write_matrix(std::ostream& out, const std::string& name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    write_row(out, m.row(i).transpose());
  }
}

Matrix read_matrix(std::istream& in, const std::string& expect) {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  if (!(in >> name >> rows >> cols) || name != expect) {
    throw DataError("checkpoint: expected section " + expect);
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (!(in >> m(i, j))) {
        throw DataError("checkpoint: truncated section " + expect);
      }
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const ScoringModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("save_checkpoint: cannot open " + path);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", model.gamma);
  out << to_string(model.kind) << ' ' << model.table.dim << ' ' << model.n_entities() << ' '
      << model.n_relations() << ' ' << buf << '\n';
  for (Index i = 0; i < model.table.entity_vectors.rows(); ++i) {
    write_row(out, model.table.entity_vectors.row(i).transpose());
  }
  for (Index i = 0; i < model.table.relation_params.rows(); ++i) {
    write_row(out, model.table.relation_params.row(i).transpose());
  }
  if (model.ermlp) {
    const ErmlpWeights& w = *model.ermlp;
    write_matrix(out, "w1", w.w1);
    write_matrix(out, "b1", w.b1.transpose());
    write_matrix(out, "w2", w.w2);
    write_matrix(out, "b2", w.b2.transpose());
    write_matrix(out, "w3", w.w3.transpose());
    Matrix b3(1, 1);
    b3(0, 0) = w.b3;
    write_matrix(out, "b3", b3);
  }
}

ScoringModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("load_checkpoint: cannot open " + path);
  }
  std::string kind_str;
  Index dim = 0;
  Index n_ent = 0;
  Index n_rel = 0;
  Scalar gamma = 0.0;
  if (!(in >> kind_str >> dim >> n_ent >> n_rel >> gamma)) {
    throw DataError("load_checkpoint: bad header in " + path);
  }
  ScoringModel model;
  model.kind = model_kind_from_string(kind_str);
  model.gamma = gamma;
  model.table.dim = dim;
  model.table.entity_vectors.resize(n_ent, dim);
  for (Index i = 0; i < n_ent; ++i) {
    for (Index j = 0; j < dim; ++j) {
      if (!(in >> model.table.entity_vectors(i, j))) {
        throw DataError("load_checkpoint: truncated entity rows");
      }
    }
  }
  const Index rdim = relation_dim(model.kind, dim);
  model.table.relation_params.resize(n_rel, rdim);
  for (Index i = 0; i < n_rel; ++i) {
    for (Index j = 0; j < rdim; ++j) {
      if (!(in >> model.table.relation_params(i, j))) {
        throw DataError("load_checkpoint: truncated relation rows");
      }
    }
  }
  if (model.kind == ModelKind::Ermlp) {
    ErmlpWeights w;
    w.w1 = read_matrix(in, "w1");
    w.b1 = read_matrix(in, "b1").row(0);
    w.w2 = read_matrix(in, "w2");
    w.b2 = read_matrix(in, "b2").row(0);
    w.w3 = read_matrix(in, "w3").row(0);
    w.b3 = read_matrix(in, "b3")(0, 0);
    model.ermlp = std::move(w);
  }
  return model;
}

}  // namespace kgqa
