#pragma once

#include <cmath>

#include "kgqa/types.hpp"

namespace kgqa {

template <typename S>
S sigmoid(S x) {
  if (x >= S(0)) {
    return S(1) / (S(1) + std::exp(-x));
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

/// log(1 + e^x) without overflow; -log(sigmoid(x)) == softplus(-x).
template <typename S>
S softplus(S x) {
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

/// Softmax with max-subtraction. Invariant under constant logit shifts.
template <typename Derived>
VectorT<typename Derived::Scalar> softmax_stable(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  VectorT<S> p = logits;
  const S m = p.maxCoeff();
  p = (p.array() - m).exp();
  p /= p.sum();
  return p;
}

/// Cosine similarity in [-1,1]; either argument zero -> 0 by convention.
template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar cosine(const Eigen::MatrixBase<DerivedU>& u,
                                 const Eigen::MatrixBase<DerivedV>& v) {
  using S = typename DerivedU::Scalar;
  if (u.size() != v.size()) {
    throw DataError("cosine: dimension mismatch");
  }
  const S nu = u.norm();
  const S nv = v.norm();
  if (nu == S(0) || nv == S(0)) {
    return S(0);
  }
  return u.dot(v) / (nu * nv);
}

/// Min-max map onto [0,1]; a degenerate range maps everything to 0.
template <typename Derived>
VectorT<typename Derived::Scalar> minmax_normalize(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  VectorT<S> out = x;
  const S lo = out.minCoeff();
  const S hi = out.maxCoeff();
  if (hi - lo <= S(0)) {
    out.setZero();
    return out;
  }
  out = (out.array() - lo) / (hi - lo);
  return out;
}

/// floor(frac * n) robust to representation error in frac * n.
inline std::size_t floor_fraction(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
}

/// ceil(frac * n), robust the other way.
inline std::size_t ceil_fraction(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
}

}  // namespace kgqa
