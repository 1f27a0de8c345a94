#include "kgqa/text.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "kgqa/kg.hpp"

namespace kgqa {

TokenSet tokenize(std::string_view text) {
  TokenSet out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (i < n) {
    while (i < n && is_space(text[i])) {
      ++i;
    }
    std::size_t start = i;
    while (i < n && !is_space(text[i])) {
      ++i;
    }
    if (i == start) {
      continue;
    }
    std::size_t lo = start;
    std::size_t hi = i;
    while (lo < hi && is_punct(text[lo])) {
      ++lo;
    }
    while (hi > lo && is_punct(text[hi - 1])) {
      --hi;
    }
    if (hi > lo) {
      out.push_back(ascii_lower(text.substr(lo, hi - lo)));
    }
  }
  return out;
}

WordVectorTable::WordVectorTable(std::vector<std::string> tokens, Matrix vectors)
    : tokens_(std::move(tokens)), vectors_(std::move(vectors)) {
  if (static_cast<Index>(tokens_.size()) != vectors_.rows()) {
    throw DataError("WordVectorTable: token/vector count mismatch");
  }
  for (Index i = 0; i < vectors_.rows(); ++i) {
    index_.emplace(tokens_[static_cast<std::size_t>(i)], i);
  }
}

std::optional<Index> WordVectorTable::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) {
    return std::nullopt;
  }
  return it->second;
}

WordVectorTable load_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("load_vectors: cannot open " + path);
  }
  std::vector<std::string> tokens;
  std::vector<Vector> rows;
  std::unordered_set<std::string> seen;
  Index dim = -1;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> vals;
    double v;
    while (ss >> v) {
      vals.push_back(v);
    }
    if (!ss.eof()) {
      throw DataError("load_vectors: unparseable number at line " + std::to_string(lineno));
    }
    if (vals.empty()) {
      throw DataError("load_vectors: no values at line " + std::to_string(lineno));
    }
    if (dim < 0) {
      dim = static_cast<Index>(vals.size());
    } else if (static_cast<Index>(vals.size()) != dim) {
      throw DataError("load_vectors: inconsistent dimension at line " + std::to_string(lineno));
    }
    if (!seen.insert(token).second) {
      continue;  // first occurrence wins
    }
    tokens.push_back(token);
    rows.push_back(Eigen::Map<Vector>(vals.data(), dim));
  }
  if (rows.empty()) {
    throw DataError("load_vectors: empty file " + path);
  }
  Matrix m(static_cast<Index>(rows.size()), dim);
  for (Index i = 0; i < m.rows(); ++i) {
    m.row(i) = rows[static_cast<std::size_t>(i)];
  }
  return WordVectorTable(std::move(tokens), std::move(m));
}

double jaccard(const TokenSet& a, const TokenSet& b) {
  std::unordered_set<std::string> sa(a.begin(), a.end());
  std::unordered_set<std::string> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) {
    return 0.0;
  }
  std::size_t inter = 0;
  for (const auto& t : sa) {
    inter += sb.count(t);
  }
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Vector avg_vector(const TokenSet& tokens, const WordVectorTable& table) {
  Vector sum = Vector::Zero(table.dim());
  Index hits = 0;
  for (const auto& t : tokens) {
    if (auto row = table.find(t)) {
      sum += table.vector(*row);
      ++hits;
    }
  }
  if (hits > 0) {
    sum /= static_cast<Scalar>(hits);
  }
  return sum;
}

}  // namespace kgqa
