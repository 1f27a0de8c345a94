#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>

namespace kgqa {

template <typename S>
using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VectorT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Scalar = double;
using Matrix = MatrixT<Scalar>;
using Vector = VectorT<Scalar>;
using Index = Eigen::Index;

// Exit-code mapping: UsageError -> 1, DataError -> 2, NumericError -> 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense index into the entity vocabulary.
struct EntityId {
  std::int32_t v = -1;
  constexpr EntityId() = default;
  constexpr explicit EntityId(std::int32_t i) : v(i) {}
  friend constexpr bool operator==(EntityId, EntityId) = default;
  friend constexpr auto operator<=>(EntityId, EntityId) = default;
};

/// Dense index into the relation vocabulary.
struct RelationId {
  std::int32_t v = -1;
  constexpr RelationId() = default;
  constexpr explicit RelationId(std::int32_t i) : v(i) {}
  friend constexpr bool operator==(RelationId, RelationId) = default;
  friend constexpr auto operator<=>(RelationId, RelationId) = default;
};

struct Triple {
  EntityId head;
  RelationId rel;
  EntityId tail;
  friend constexpr bool operator==(const Triple&, const Triple&) = default;
  friend constexpr auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t x = static_cast<std::uint32_t>(t.head.v);
    x = x * 0x9e3779b97f4a7c15ULL + static_cast<std::uint32_t>(t.rel.v);
    x = x * 0x9e3779b97f4a7c15ULL + static_cast<std::uint32_t>(t.tail.v);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return static_cast<std::size_t>(x);
  }
};

}  // namespace kgqa
