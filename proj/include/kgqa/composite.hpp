#pragma once

#include <span>
#include <vector>

#include "kgqa/kg.hpp"
#include "kgqa/qa.hpp"
#include "kgqa/text.hpp"
#include "kgqa/types.hpp"

namespace kgqa {

struct FactScore {
  Triple fact;
  Scalar eta = 0.0;
  Index kg_index = 0;
};

/// Deduplicated tokens of head surface + relation name + tail surface,
/// first-appearance ordered.
TokenSet fact_tokens(const KnowledgeGraph& kg, const Triple& fact);

/// Lexical fact pruning: per fact word w, S(w) = max cosine against the
/// question-plus-image token set; eta sums the top ceil(0.8*|words|) scores.
/// Returns the top_k facts by eta, ties broken by KG edge order.
std::vector<FactScore> prune_facts(const TokenSet& question, const ImageAsKnowledge& image,
                                   const KnowledgeGraph& kg, const WordVectorTable& words,
                                   int top_k = 100);

/// Heads and tails of the facts, deduplicated, first-appearance ordered.
std::vector<EntityId> candidate_entities(std::span<const FactScore> facts);

struct CompositeWeights {
  Scalar l1 = 0.4;
  Scalar l2 = 0.3;
  Scalar l3 = 0.3;
  void validate() const;
};

struct CompositeResult {
  EntityId answer;
  std::vector<EntityId> candidates;
  Vector scores;
  Scalar gate_prob = 0.5;
};

/// lambda1 * K + lambda2 * J + lambda3 * G over the candidate entities of
/// the pruned facts. K and G are min-max normalized per question; J is a
/// Jaccard similarity and already lives in [0,1]. The fusion model is not
/// consulted when lambda1 == 0. With `raw_kg_score` the K term skips its
/// min-max normalization (ablation).
CompositeResult composite_answer(const TokenSet& question, const ImageAsKnowledge& image,
                                 const QaModel& model, const EmbeddingTable& entities,
                                 const KnowledgeGraph& kg, std::span<const FactScore> facts,
                                 const CompositeWeights& weights, const WordVectorTable& words,
                                 bool raw_kg_score = false);

}  // namespace kgqa
