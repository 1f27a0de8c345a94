#include "kgqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "kgqa/kg.hpp"
#include "kgqa/qa.hpp"
#include "kgqa/rng.hpp"
#include "kgqa/text.hpp"

namespace kgqa {

void SynthConfig::validate() const {
  if (n_entities < 2) throw DataError("synth: need at least 2 entities");
  if (n_relations < 1) throw DataError("synth: need at least 1 relation");
  if (n_edges < 1) throw DataError("synth: need at least 1 edge");
  if (n_images < 1) throw DataError("synth: need at least 1 image");
  if (max_concepts_per_image < 1 || max_concepts_per_image > kMaxConcepts) {
    throw DataError("synth: max_concepts_per_image must be in [1,14]");
  }
  if (n_questions < 1) throw DataError("synth: need at least 1 question");
  if (image_answer_fraction < 0.0 || image_answer_fraction > 1.0) {
    throw DataError("synth: image_answer_fraction must be in [0,1]");
  }
  if (planted_dim < 2) throw DataError("synth: planted_dim must be >= 2");
  const long long cap = static_cast<long long>(n_entities) *
                        static_cast<long long>(n_entities - 1) *
                        static_cast<long long>(n_relations);
  if (static_cast<long long>(n_edges) > cap) {
    throw DataError("synth: infeasible config, more edges than entity pairs");
  }
}

namespace {

struct Cell {
  int x = 0;
  int y = 0;
};

std::string entity_surface(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ent%04d", i);
  return buf;
}

std::string relation_surface(int j) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rel%02d", j);
  return buf;
}

std::string image_surface(int j) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%04d", j);
  return buf;
}

std::vector<Cell> relation_steps(int n) {
  std::vector<Cell> all;
  for (int radius = 1; static_cast<int>(all.size()) < n; ++radius) {
    std::vector<Cell> shell;
    for (int dx = -radius; dx <= radius; ++dx) {
      for (int dy = -radius; dy <= radius; ++dy) {
        if (dx == 0 && dy == 0) continue;
        if (std::max(std::abs(dx), std::abs(dy)) != radius) continue;
        shell.push_back({dx, dy});
      }
    }
    std::sort(shell.begin(), shell.end(), [](const Cell& a, const Cell& b) {
      const int na = a.x * a.x + a.y * a.y;
      const int nb = b.x * b.x + b.y * b.y;
      if (na != nb) return na < nb;
      if (a.x != b.x) return a.x < b.x;
      return a.y < b.y;
    });
    for (const Cell& c : shell) {
      all.push_back(c);
    }
  }
  all.resize(static_cast<std::size_t>(n));
  return all;
}

struct RawTriple {
  int h, r, t;
  bool operator==(const RawTriple&) const = default;
};
struct RawTripleHash {
  std::size_t operator()(const RawTriple& t) const {
    return splitmix64((static_cast<std::uint64_t>(t.h) << 40) ^
                      (static_cast<std::uint64_t>(t.r) << 20) ^ static_cast<std::uint64_t>(t.t));
  }
};

const char* const kImageTemplatesHead[] = {
    "which object in the image %s %s",
    "what object in the picture %s %s",
};
const char* const kImageTemplatesTail[] = {
    "which object in the image is %s of %s",
    "what object in the picture is %s of %s",
};
const char* const kKgTemplatesTail[] = {
    "what does %s %s in the knowledge graph",
    "which entity does %s %s according to the graph",
};
const char* const kKgTemplatesHead[] = {
    "what has %s %s in the knowledge graph",
    "which entity has %s %s according to the graph",
};

const char* const kTemplateWords[] = {"which", "what",   "object", "in",        "the",
                                      "image", "picture", "is",     "of",        "does",
                                      "has",   "knowledge", "graph", "entity",  "according",
                                      "to"};

std::string format2(const char* tpl, const std::string& a, const std::string& b) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), tpl, a.c_str(), b.c_str());
  return buf;
}

}  // namespace

void generate_synthetic(const SynthConfig& config, const SynthPaths& paths) {
  config.validate();
  Rng master(config.seed);

  // entity positions on an m x m lattice
  const int m = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(config.n_entities))));
  std::vector<int> cells(static_cast<std::size_t>(m) * static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i] = static_cast<int>(i);
  }
  Rng lattice_rng = master.fork(1);
  lattice_rng.shuffle(cells);
  std::vector<Cell> pos(static_cast<std::size_t>(config.n_entities));
  std::map<std::pair<int, int>, int> at;
  for (int i = 0; i < config.n_entities; ++i) {
    pos[static_cast<std::size_t>(i)] = {cells[static_cast<std::size_t>(i)] % m,
                                        cells[static_cast<std::size_t>(i)] / m};
    at[{pos[static_cast<std::size_t>(i)].x, pos[static_cast<std::size_t>(i)].y}] = i;
  }

  // consistent edge pool: (h, r, t) whenever pos[t] == pos[h] + step[r]
  const std::vector<Cell> steps = relation_steps(config.n_relations);
  std::vector<RawTriple> pool;
  for (int r = 0; r < config.n_relations; ++r) {
    for (int h = 0; h < config.n_entities; ++h) {
      auto it = at.find({pos[static_cast<std::size_t>(h)].x + steps[static_cast<std::size_t>(r)].x,
                         pos[static_cast<std::size_t>(h)].y + steps[static_cast<std::size_t>(r)].y});
      if (it != at.end() && it->second != h) {
        pool.push_back({h, r, it->second});
      }
    }
  }
  Rng edge_rng = master.fork(2);
  edge_rng.shuffle(pool);
  std::vector<RawTriple> edges;
  std::unordered_set<RawTriple, RawTripleHash> edge_set;
  for (const RawTriple& t : pool) {
    if (static_cast<int>(edges.size()) >= config.n_edges) break;
    edges.push_back(t);
    edge_set.insert(t);
  }
  // top up with random filler when the consistent pool is too small
  while (static_cast<int>(edges.size()) < config.n_edges) {
    RawTriple t;
    t.h = static_cast<int>(edge_rng.below(static_cast<std::size_t>(config.n_entities)));
    t.t = static_cast<int>(edge_rng.below(static_cast<std::size_t>(config.n_entities - 1)));
    if (t.t >= t.h) ++t.t;
    t.r = static_cast<int>(edge_rng.below(static_cast<std::size_t>(config.n_relations)));
    if (edge_set.insert(t).second) {
      edges.push_back(t);
    }
  }
  edge_rng.shuffle(edges);

  {
    std::ofstream out(paths.kg);
    if (!out) throw DataError("generate_synthetic: cannot open " + paths.kg);
    for (const RawTriple& t : edges) {
      out << entity_surface(t.h) << '\t' << relation_surface(t.r) << '\t' << entity_surface(t.t)
          << '\n';
    }
  }

  // word vectors: entity tokens carry their (centered, scaled) lattice
  // coordinates in the first two dims so lexical similarity tracks the
  // planted geometry; everything else is seeded noise
  Rng vec_rng = master.fork(3);
  {
    std::ofstream out(paths.vectors);
    if (!out) throw DataError("generate_synthetic: cannot open " + paths.vectors);
    char buf[32];
    auto write_vec = [&](const std::string& token, const std::vector<double>& v) {
      out << token;
      for (double x : v) {
        std::snprintf(buf, sizeof(buf), "%.9g", x);
        out << ' ' << buf;
      }
      out << '\n';
    };
    const double half = static_cast<double>(m) / 2.0;
    for (int i = 0; i < config.n_entities; ++i) {
      std::vector<double> v(static_cast<std::size_t>(config.planted_dim));
      v[0] = (pos[static_cast<std::size_t>(i)].x - half) / half;
      v[1] = (pos[static_cast<std::size_t>(i)].y - half) / half;
      for (int d = 2; d < config.planted_dim; ++d) {
        v[static_cast<std::size_t>(d)] = vec_rng.uniform(-0.15, 0.15);
      }
      write_vec(entity_surface(i), v);
    }
    for (int j = 0; j < config.n_relations; ++j) {
      std::vector<double> v(static_cast<std::size_t>(config.planted_dim));
      for (int d = 0; d < config.planted_dim; ++d) {
        v[static_cast<std::size_t>(d)] = vec_rng.uniform(-1.0, 1.0);
      }
      write_vec(relation_surface(j), v);
    }
    for (const char* w : kTemplateWords) {
      std::vector<double> v(static_cast<std::size_t>(config.planted_dim));
      for (int d = 0; d < config.planted_dim; ++d) {
        v[static_cast<std::size_t>(d)] = vec_rng.uniform(-1.0, 1.0);
      }
      write_vec(w, v);
    }
  }

  // incident edges per entity, over the final edge list
  std::vector<std::vector<int>> incident(static_cast<std::size_t>(config.n_entities));
  for (std::size_t k = 0; k < edges.size(); ++k) {
    incident[static_cast<std::size_t>(edges[k].h)].push_back(static_cast<int>(k));
    if (edges[k].t != edges[k].h) {
      incident[static_cast<std::size_t>(edges[k].t)].push_back(static_cast<int>(k));
    }
  }
  std::vector<int> connected;
  for (int i = 0; i < config.n_entities; ++i) {
    if (!incident[static_cast<std::size_t>(i)].empty()) {
      connected.push_back(i);
    }
  }
  if (connected.size() < 2) {
    throw DataError("generate_synthetic: degenerate graph, no connected entities");
  }

  // images: concepts drawn from connected entities
  Rng img_rng = master.fork(4);
  std::vector<std::vector<int>> image_concepts(static_cast<std::size_t>(config.n_images));
  for (int i = 0; i < config.n_images; ++i) {
    const int want = 2 + static_cast<int>(img_rng.below(
                             static_cast<std::size_t>(std::max(1, config.max_concepts_per_image - 1))));
    std::vector<int> pick(connected);
    img_rng.shuffle(pick);
    pick.resize(static_cast<std::size_t>(std::min<int>(want, static_cast<int>(pick.size()))));
    image_concepts[static_cast<std::size_t>(i)] = std::move(pick);
  }

  // questions
  Rng q_rng = master.fork(5);
  const int n_image_src =
      static_cast<int>(std::llround(config.image_answer_fraction * config.n_questions));
  std::vector<int> labels(static_cast<std::size_t>(config.n_questions), 0);
  for (int i = 0; i < n_image_src; ++i) {
    labels[static_cast<std::size_t>(i)] = 1;
  }
  q_rng.shuffle(labels);

  struct QaRow {
    std::string question, image, answer, source, h, r, t;
  };
  std::vector<QaRow> rows;
  for (int qi = 0; qi < config.n_questions; ++qi) {
    const bool image_source = labels[static_cast<std::size_t>(qi)] == 1;
    QaRow row;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) {
        throw DataError("generate_synthetic: could not place question (graph too sparse)");
      }
      const int img = static_cast<int>(q_rng.below(static_cast<std::size_t>(config.n_images)));
      const auto& concepts = image_concepts[static_cast<std::size_t>(img)];
      const int e = concepts[q_rng.below(concepts.size())];
      const auto& inc = incident[static_cast<std::size_t>(e)];
      if (inc.empty()) continue;
      const RawTriple& f = edges[static_cast<std::size_t>(inc[q_rng.below(inc.size())])];
      const bool e_is_head = f.h == e;
      const int other = e_is_head ? f.t : f.h;
      if (other == e) continue;
      const int variant = static_cast<int>(q_rng.below(2));
      if (image_source) {
        // answer is the in-image endpoint; question names the other one
        row.answer = entity_surface(e);
        row.question = e_is_head
                           ? format2(kImageTemplatesHead[variant], relation_surface(f.r),
                                     entity_surface(other))
                           : format2(kImageTemplatesTail[variant], relation_surface(f.r),
                                     entity_surface(other));
        row.source = "image";
      } else {
        // answer is the off-image endpoint
        bool other_visible = false;
        for (int c : concepts) {
          other_visible = other_visible || c == other;
        }
        if (other_visible) continue;
        row.answer = entity_surface(other);
        row.question = e_is_head ? format2(kKgTemplatesTail[variant], entity_surface(e),
                                           relation_surface(f.r))
                                 : format2(kKgTemplatesHead[variant], relation_surface(f.r),
                                           entity_surface(e));
        row.source = "kg";
      }
      row.image = image_surface(img);
      row.h = entity_surface(f.h);
      row.r = relation_surface(f.r);
      row.t = entity_surface(f.t);
      break;
    }
    rows.push_back(std::move(row));
  }

  {
    std::ofstream out(paths.images);
    if (!out) throw DataError("generate_synthetic: cannot open " + paths.images);
    for (int i = 0; i < config.n_images; ++i) {
      out << image_surface(i) << '\t';
      const auto& concepts = image_concepts[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < concepts.size(); ++j) {
        out << entity_surface(concepts[j]) << (j + 1 == concepts.size() ? "" : "|");
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(paths.qa);
    if (!out) throw DataError("generate_synthetic: cannot open " + paths.qa);
    for (const QaRow& row : rows) {
      out << row.question << '\t' << row.image << '\t' << row.answer << '\t' << row.source << '\t'
          << row.h << '\t' << row.r << '\t' << row.t << '\n';
    }
  }
}

ConsistencyReport check_consistency(const SynthPaths& paths) {
  ConsistencyReport report;
  auto fail = [&](const std::string& msg) {
    report.ok = false;
    report.problems.push_back(msg);
  };
  KnowledgeGraph kg = load_kg(paths.kg);
  WordVectorTable words = load_vectors(paths.vectors);
  QaDataset data = load_qa_dataset(paths.images, paths.qa, kg);
  report.n_edges = kg.edges.size();
  report.n_images = data.images.size();
  report.n_questions = data.instances.size();
  for (const auto& img : data.images) {
    if (img.concepts.empty() || static_cast<int>(img.concepts.size()) > kMaxConcepts) {
      fail("image " + img.image_id + ": concept count out of range");
    }
  }
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    const QAInstance& inst = data.instances[i];
    if (!kg.contains(inst.fact)) {
      fail("instance " + std::to_string(i) + ": supporting fact missing from KG");
    }
    if (inst.source == AnswerSource::Image) {
      ++report.n_image_source;
      const auto& concepts = data.images[static_cast<std::size_t>(inst.image_index)].concepts;
      bool found = false;
      for (EntityId c : concepts) {
        found = found || c == inst.answer;
      }
      if (!found) {
        fail("instance " + std::to_string(i) + ": image-source answer not in image");
      }
    }
    for (const std::string& tok : inst.question) {
      if (!words.find(tok)) {
        fail("instance " + std::to_string(i) + ": token '" + tok + "' missing from vectors");
      }
    }
  }
  for (std::int32_t e = 0; e < kg.entities.size(); ++e) {
    for (const std::string& tok : tokenize(kg.entities.surface(e))) {
      if (!words.find(tok)) {
        fail("entity surface token '" + tok + "' missing from vectors");
      }
    }
  }
  for (std::int32_t r = 0; r < kg.relations.size(); ++r) {
    for (const std::string& tok : tokenize(kg.relations.surface(r))) {
      if (!words.find(tok)) {
        fail("relation surface token '" + tok + "' missing from vectors");
      }
    }
  }
  return report;
}

}  // namespace kgqa
