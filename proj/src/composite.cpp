#include "kgqa/composite.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "kgqa/numeric.hpp"

namespace kgqa {

TokenSet fact_tokens(const KnowledgeGraph& kg, const Triple& fact) {
  TokenSet out;
  std::unordered_set<std::string> seen;
  for (const std::string& surface :
       {kg.entities.surface(fact.head.v), kg.relations.surface(fact.rel.v),
        kg.entities.surface(fact.tail.v)}) {
    for (std::string& tok : tokenize(surface)) {
      if (seen.insert(tok).second) {
        out.push_back(std::move(tok));
      }
    }
  }
  return out;
}

std::vector<FactScore> prune_facts(const TokenSet& question, const ImageAsKnowledge& image,
                                   const KnowledgeGraph& kg, const WordVectorTable& words,
                                   int top_k) {
  if (kg.edges.empty()) {
    throw DataError("prune_facts: empty graph");
  }
  if (top_k < 1) {
    throw DataError("prune_facts: top_k must be >= 1");
  }
  // T = question tokens plus surface tokens of the image concepts
  TokenSet pool = question;
  for (EntityId c : image.concepts) {
    for (std::string& tok : tokenize(kg.entities.surface(c.v))) {
      pool.push_back(std::move(tok));
    }
  }
  std::vector<Index> pool_rows;
  std::unordered_set<std::string> pool_seen;
  for (const std::string& tok : pool) {
    if (pool_seen.insert(tok).second) {
      if (auto row = words.find(tok)) {
        pool_rows.push_back(*row);
      }
    }
  }
  if (pool_seen.empty()) {
    throw DataError("prune_facts: empty token set");
  }
  // per-word best cosine is reused across facts
  std::unordered_map<std::string, Scalar> word_score;
  auto best_score = [&](const std::string& w) {
    auto it = word_score.find(w);
    if (it != word_score.end()) {
      return it->second;
    }
    Scalar best = 0.0;
    if (auto row = words.find(w)) {
      const Vector wv = words.vector(*row);
      bool first = true;
      for (Index r : pool_rows) {
        const Scalar c = cosine(wv, words.vector(r));
        if (first || c > best) {
          best = c;
          first = false;
        }
      }
      if (first) {
        best = 0.0;  // no in-vocabulary context token
      }
    }
    word_score.emplace(w, best);
    return best;
  };

  std::vector<FactScore> scored;
  scored.reserve(kg.edges.size());
  std::vector<Scalar> s;
  for (std::size_t k = 0; k < kg.edges.size(); ++k) {
    const Triple& fact = kg.edges[k];
    const TokenSet toks = fact_tokens(kg, fact);
    s.clear();
    for (const std::string& w : toks) {
      s.push_back(best_score(w));
    }
    std::sort(s.begin(), s.end(), std::greater<>());
    const std::size_t kept = std::min(s.size(), ceil_fraction(0.8, s.size()));
    Scalar eta = 0.0;
    for (std::size_t i = 0; i < kept; ++i) {
      eta += s[i];
    }
    scored.push_back({fact, eta, static_cast<Index>(k)});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const FactScore& a, const FactScore& b) {
    if (a.eta != b.eta) {
      return a.eta > b.eta;
    }
    return a.kg_index < b.kg_index;
  });
  if (static_cast<int>(scored.size()) > top_k) {
    scored.resize(static_cast<std::size_t>(top_k));
  }
  return scored;
}

std::vector<EntityId> candidate_entities(std::span<const FactScore> facts) {
  std::vector<EntityId> out;
  std::unordered_set<std::int32_t> seen;
  for (const FactScore& f : facts) {
    for (EntityId e : {f.fact.head, f.fact.tail}) {
      if (seen.insert(e.v).second) {
        out.push_back(e);
      }
    }
  }
  return out;
}

void CompositeWeights::validate() const {
  if (l1 < 0 || l2 < 0 || l3 < 0) {
    throw DataError("composite weights must be non-negative");
  }
  if (std::abs(l1 + l2 + l3 - 1.0) > 1e-9) {
    throw DataError("composite weights must sum to 1");
  }
}

CompositeResult composite_answer(const TokenSet& question, const ImageAsKnowledge& image,
                                 const QaModel& model, const EmbeddingTable& entities,
                                 const KnowledgeGraph& kg, std::span<const FactScore> facts,
                                 const CompositeWeights& weights, const WordVectorTable& words,
                                 bool raw_kg_score) {
  weights.validate();
  if (facts.empty()) {
    throw DataError("composite_answer: empty fact list");
  }
  CompositeResult result;
  result.candidates = candidate_entities(facts);
  const Index n = static_cast<Index>(result.candidates.size());
  if (n == 0) {
    throw DataError("composite_answer: empty candidate set");
  }
  std::unordered_map<std::int32_t, Index> cand_pos;
  for (Index i = 0; i < n; ++i) {
    cand_pos.emplace(result.candidates[static_cast<std::size_t>(i)].v, i);
  }

  // J and G: per-fact similarity, maxed over the facts containing e
  Vector j_metric = Vector::Zero(n);
  Vector g_raw = Vector::Zero(n);
  std::vector<bool> g_set(static_cast<std::size_t>(n), false);
  const Vector q_avg = avg_vector(question, words);
  for (const FactScore& f : facts) {
    const TokenSet ftoks = fact_tokens(kg, f.fact);
    const Scalar j = jaccard(question, ftoks);
    const Scalar g = cosine(q_avg, avg_vector(ftoks, words));
    for (EntityId e : {f.fact.head, f.fact.tail}) {
      const Index i = cand_pos.at(e.v);
      j_metric[i] = std::max(j_metric[i], j);
      if (!g_set[static_cast<std::size_t>(i)]) {
        g_raw[i] = g;
        g_set[static_cast<std::size_t>(i)] = true;
      } else {
        g_raw[i] = std::max(g_raw[i], g);
      }
    }
  }
  const Vector g_metric = minmax_normalize(g_raw);

  Vector k_metric = Vector::Zero(n);
  Scalar gate_prob = 0.5;
  if (weights.l1 > 0) {
    const GatedQuery gq = gated_query(question, image, model, entities, words);
    gate_prob = gq.gate_prob;
    Vector k_raw(n);
    for (Index i = 0; i < n; ++i) {
      k_raw[i] = cosine(
          gq.query,
          entities.entity_vectors.row(result.candidates[static_cast<std::size_t>(i)].v).transpose());
    }
    k_metric = raw_kg_score ? k_raw : Vector(minmax_normalize(k_raw));
  }

  result.scores = weights.l1 * k_metric + weights.l2 * j_metric + weights.l3 * g_metric;
  result.gate_prob = gate_prob;
  Index best = 0;
  for (Index i = 1; i < n; ++i) {
    if (result.scores[i] > result.scores[best]) {
      best = i;
    }
  }
  result.answer = result.candidates[static_cast<std::size_t>(best)];
  return result;
}

}  // namespace kgqa
