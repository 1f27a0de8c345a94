#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgqa/numeric.hpp"
#include "kgqa/types.hpp"

namespace kgqa {

/// Ordered list of lowercase tokens (may repeat).
using TokenSet = std::vector<std::string>;

/// Lowercase, split on whitespace, strip leading/trailing punctuation,
/// drop empties. No stemming, no stopword removal.
TokenSet tokenize(std::string_view text);

class WordVectorTable {
 public:
  WordVectorTable() = default;
  WordVectorTable(std::vector<std::string> tokens, Matrix vectors);

  Index dim() const { return vectors_.cols(); }
  Index size() const { return vectors_.rows(); }
  std::optional<Index> find(std::string_view token) const;
  Vector vector(Index row) const { return vectors_.row(row); }
  const std::string& token(Index row) const { return tokens_[static_cast<std::size_t>(row)]; }

 private:
  std::vector<std::string> tokens_;
  Matrix vectors_;
  std::unordered_map<std::string, Index> index_;
};

/// `token v1 ... vd` per line; duplicate tokens keep their first vector.
WordVectorTable load_vectors(const std::string& path);

double jaccard(const TokenSet& a, const TokenSet& b);

/// Mean of in-vocabulary token vectors; empty or all-OOV gives zero.
Vector avg_vector(const TokenSet& tokens, const WordVectorTable& table);

}  // namespace kgqa
