#pragma once

#include <vector>

#include "q2p/kg.hpp"
#include "q2p/query.hpp"

namespace q2p {

// Sorted, duplicate-free entity set.
using AnswerSet = std::vector<EntityId>;

// Exact bottom-up evaluation of the query's set semantics on a concrete
// graph: anchors denote singletons, projection follows relation edges from
// every member, intersection/union are the set operations, complement is
// taken against the full entity vocabulary. Shared subtrees are evaluated
// once per call.
AnswerSet answer(const Query& q, const KnowledgeGraph& g);

// Answers found on the larger graph but not on the smaller one. Requires the
// smaller graph's edges to be a subset of the larger's; not revalidated here.
AnswerSet hard_answers(const Query& q, const KnowledgeGraph& larger,
                       const KnowledgeGraph& smaller);

}  // namespace q2p
