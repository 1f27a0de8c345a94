#include "kgqa/linkpred.hpp"

#include <cmath>
#include <sstream>

namespace kgqa {

Index rank_from_scores(const Vector& scores, Index true_index) {
  const Scalar s = scores[true_index];
  Index greater = 0;
  Index ties = 0;
  for (Index i = 0; i < scores.size(); ++i) {
    if (i == true_index) {
      continue;
    }
    if (scores[i] > s) {
      ++greater;
    } else if (scores[i] == s) {
      ++ties;
    }
  }
  return 1 + greater + (ties + 1) / 2;
}

RankResult rank_entity(const ScoringModel& model, const RankQuery& query,
                       const KnowledgeGraph* filter_graph) {
  const Index n = model.n_entities();
  const Triple& q = query.triple;
  const EntityId truth = query.tail_query ? q.tail : q.head;
  const Scalar true_score = score(model, q);
  Index greater = 0;
  Index ties = 0;
  for (Index c = 0; c < n; ++c) {
    if (c == truth.v) {
      continue;
    }
    Triple cand = q;
    if (query.tail_query) {
      cand.tail = EntityId(static_cast<std::int32_t>(c));
    } else {
      cand.head = EntityId(static_cast<std::int32_t>(c));
    }
    if (filter_graph && filter_graph->contains(cand)) {
      continue;  // filtered protocol: drop competing true edges
    }
    const Scalar s = score(model, cand);
    if (s > true_score) {
      ++greater;
    } else if (s == true_score) {
      ++ties;
    }
  }
  RankResult result;
  result.query = query;
  result.true_entity = truth;
  result.rank = 1 + greater + (ties + 1) / 2;
  return result;
}

LinkPredMetrics metrics_from_ranks(const std::vector<Index>& ranks) {
  if (ranks.empty()) {
    throw DataError("metrics_from_ranks: empty rank list");
  }
  LinkPredMetrics m;
  const Scalar n = static_cast<Scalar>(ranks.size());
  for (Index r : ranks) {
    m.mr += static_cast<Scalar>(r);
    m.mrr += 1.0 / static_cast<Scalar>(r);
    m.hits1 += r <= 1 ? 1.0 : 0.0;
    m.hits3 += r <= 3 ? 1.0 : 0.0;
    m.hits10 += r <= 10 ? 1.0 : 0.0;
  }
  m.mr /= n;
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  return m;
}

LinkPredMetrics evaluate(const ScoringModel& model, const std::vector<Triple>& test_edges,
                         const KnowledgeGraph* filter_graph) {
  if (test_edges.empty()) {
    throw DataError("evaluate: empty test set");
  }
  std::vector<Index> ranks;
  ranks.reserve(test_edges.size() * 2);
  for (const Triple& edge : test_edges) {
    ranks.push_back(rank_entity(model, {true, edge}, filter_graph).rank);
    ranks.push_back(rank_entity(model, {false, edge}, filter_graph).rank);
  }
  return metrics_from_ranks(ranks);
}

std::string metrics_json(const LinkPredMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"mr\": %.6g, \"mrr\": %.6g, \"hits1\": %.6g, \"hits3\": %.6g, "
                "\"hits10\": %.6g}",
                m.mr, m.mrr, m.hits1, m.hits3, m.hits10);
  return buf;
}

}  // namespace kgqa
