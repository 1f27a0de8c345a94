#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kgqa/types.hpp"

namespace kgqa {

/// Surface-string table with dense first-appearance ids.
class Vocabulary {
 public:
  std::int32_t add(std::string_view s);
  std::optional<std::int32_t> find(std::string_view s) const;
  const std::string& surface(std::int32_t id) const { return items_.at(static_cast<std::size_t>(id)); }
  std::int32_t size() const { return static_cast<std::int32_t>(items_.size()); }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct KnowledgeGraph {
  Vocabulary entities;
  Vocabulary relations;
  std::vector<Triple> edges;
  std::string provenance = "original";

  bool contains(const Triple& t) const { return edge_set_.count(t) > 0; }
  void rebuild_edge_set();

 private:
  std::unordered_set<Triple, TripleHash> edge_set_;
};

struct LoadReport {
  std::size_t duplicates_dropped = 0;
};

/// 3-column TSV, UTF-8, no header; surfaces are case-folded (ASCII) at load.
KnowledgeGraph load_kg(const std::string& path, LoadReport* report = nullptr);
void save_kg(const KnowledgeGraph& kg, const std::string& path);

struct EdgeSplit {
  std::vector<Triple> train;
  std::vector<Triple> test;
};

/// Disjoint partition; test gets floor((1-train_fraction)*|edges|) edges,
/// remainder goes to train. Deterministic per seed.
EdgeSplit split_edges(const KnowledgeGraph& kg, double train_fraction, std::uint64_t seed);

struct OcclusionSpec {
  enum class Mode { QaFacts, Fraction };
  Mode mode = Mode::Fraction;
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Removes edges only; the entity vocabulary is left intact.
KnowledgeGraph occlude(const KnowledgeGraph& kg, const OcclusionSpec& spec,
                       const std::vector<Triple>* qa_facts = nullptr);

std::string ascii_lower(std::string_view s);

}  // namespace kgqa
