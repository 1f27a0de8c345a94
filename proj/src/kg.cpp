#include "kgqa/kg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>

#include "kgqa/numeric.hpp"
#include "kgqa/rng.hpp"

namespace kgqa {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::int32_t Vocabulary::add(std::string_view s) {
  auto it = index_.find(std::string(s));
  if (it != index_.end()) {
    return it->second;
  }
  const std::int32_t id = size();
  items_.emplace_back(s);
  index_.emplace(items_.back(), id);
  return id;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view s) const {
  auto it = index_.find(std::string(s));
  if (it == index_.end()) {
    return std::nullopt;
  }
  return it->second;
}

void KnowledgeGraph::rebuild_edge_set() {
  edge_set_.clear();
  edge_set_.reserve(edges.size());
  for (const Triple& t : edges) {
    edge_set_.insert(t);
  }
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
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

KnowledgeGraph load_kg(const std::string& path, LoadReport* report) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("load_kg: cannot open " + path);
  }
  KnowledgeGraph kg;
  std::unordered_set<Triple, TripleHash> seen;
  LoadReport rep;
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
    auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw DataError("load_kg: malformed line " + std::to_string(lineno) + " in " + path +
                      " (expected 3 tab-separated fields)");
    }
    Triple t;
    t.head = EntityId(kg.entities.add(ascii_lower(fields[0])));
    t.rel = RelationId(kg.relations.add(ascii_lower(fields[1])));
    t.tail = EntityId(kg.entities.add(ascii_lower(fields[2])));
    if (seen.insert(t).second) {
      kg.edges.push_back(t);
    } else {
      ++rep.duplicates_dropped;
    }
  }
  if (kg.edges.empty()) {
    throw DataError("load_kg: EmptyGraph: no edges in " + path);
  }
  kg.rebuild_edge_set();
  if (report) {
    *report = rep;
  }
  return kg;
}

void save_kg(const KnowledgeGraph& kg, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("save_kg: cannot open " + path);
  }
  for (const Triple& t : kg.edges) {
    out << kg.entities.surface(t.head.v) << '\t' << kg.relations.surface(t.rel.v) << '\t'
        << kg.entities.surface(t.tail.v) << '\n';
  }
}

EdgeSplit split_edges(const KnowledgeGraph& kg, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("split_edges: train_fraction must be in (0,1)");
  }
  const std::size_t n = kg.edges.size();
  const std::size_t n_test = floor_fraction(1.0 - train_fraction, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<std::size_t> test_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::sort(test_idx.begin(), test_idx.end());
  std::vector<bool> in_test(n, false);
  for (std::size_t i : test_idx) {
    in_test[i] = true;
  }
  EdgeSplit split;
  split.train.reserve(n - n_test);
  split.test.reserve(n_test);
  for (std::size_t i = 0; i < n; ++i) {
    (in_test[i] ? split.test : split.train).push_back(kg.edges[i]);
  }
  return split;
}

KnowledgeGraph occlude(const KnowledgeGraph& kg, const OcclusionSpec& spec,
                       const std::vector<Triple>* qa_facts) {
  KnowledgeGraph out;
  out.entities = kg.entities;
  out.relations = kg.relations;
  out.provenance = "occluded";
  if (spec.mode == OcclusionSpec::Mode::QaFacts) {
    if (!qa_facts) {
      throw DataError("occlude: qa-facts mode requires the fact set");
    }
    std::unordered_set<Triple, TripleHash> remove;
    for (const Triple& f : *qa_facts) {
      if (!kg.contains(f)) {
        throw DataError("occlude: qa fact not present in graph");
      }
      remove.insert(f);
    }
    for (const Triple& t : kg.edges) {
      if (!remove.count(t)) {
        out.edges.push_back(t);
      }
    }
  } else {
    if (spec.fraction < 0.0 || spec.fraction > 1.0) {
      throw DataError("occlude: fraction must be in [0,1]");
    }
    if (spec.fraction == 1.0) {
      throw DataError("occlude: fraction=1 would empty the graph");
    }
    const std::size_t n = kg.edges.size();
    const std::size_t n_remove = floor_fraction(spec.fraction, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(spec.seed);
    rng.shuffle(idx);
    std::vector<bool> removed(n, false);
    for (std::size_t i = 0; i < n_remove; ++i) {
      removed[idx[i]] = true;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!removed[i]) {
        out.edges.push_back(kg.edges[i]);
      }
    }
  }
  out.rebuild_edge_set();
  return out;
}

}  // namespace kgqa
