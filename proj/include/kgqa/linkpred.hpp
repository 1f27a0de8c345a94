#pragma once

#include <string>
#include <vector>

#include "kgqa/kg.hpp"
#include "kgqa/model.hpp"
#include "kgqa/types.hpp"

namespace kgqa {

/// (h,r,?) when tail_query, else (?,r,t). The held-out endpoint is the
/// query's own true entity.
struct RankQuery {
  bool tail_query = true;
  Triple triple;
};

struct RankResult {
  RankQuery query;
  EntityId true_entity;
  Index rank = 0;
};

/// Mid-rank tie handling: 1 + #strictly-greater + ceil(#ties/2), ties
/// counted over the other candidates with exactly equal score.
Index rank_from_scores(const Vector& scores, Index true_index);

/// Scores every entity as the held-out slot. Raw ranking by default; with
/// `filter_graph`, candidates that complete a different true edge are
/// skipped (the filtered protocol).
RankResult rank_entity(const ScoringModel& model, const RankQuery& query,
                       const KnowledgeGraph* filter_graph = nullptr);

struct LinkPredMetrics {
  Scalar mr = 0;
  Scalar mrr = 0;
  Scalar hits1 = 0;
  Scalar hits3 = 0;
  Scalar hits10 = 0;
};

LinkPredMetrics metrics_from_ranks(const std::vector<Index>& ranks);

/// Ranks both directions of every test edge and pools the ranks.
LinkPredMetrics evaluate(const ScoringModel& model, const std::vector<Triple>& test_edges,
                         const KnowledgeGraph* filter_graph = nullptr);

std::string metrics_json(const LinkPredMetrics& m);

}  // namespace kgqa
