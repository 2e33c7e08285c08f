#include "q2p/oracle.hpp"

#include <algorithm>

#include "q2p/errors.hpp"

namespace q2p {

namespace {

AnswerSet set_union(const AnswerSet& a, const AnswerSet& b) {
  AnswerSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

AnswerSet set_intersection(const AnswerSet& a, const AnswerSet& b) {
  AnswerSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

AnswerSet answer(const Query& q, const KnowledgeGraph& g) {
  std::vector<AnswerSet> memo(q.size());
  std::vector<char> done(q.size(), 0);
  for (std::uint32_t i : topological_order(q)) {
    const QueryNode& n = q.node(i);
    AnswerSet result;
    switch (n.kind) {
      case NodeKind::Anchor:
        if (n.entity >= g.num_entities())
          throw InputError("anchor entity id " + std::to_string(n.entity) + " out of range");
        result = {n.entity};
        break;
      case NodeKind::Projection: {
        if (n.relation >= g.num_relations())
          throw InputError("relation id " + std::to_string(n.relation) + " out of range");
        // Flag set keeps the projection linear in |V| even when member
        // neighborhoods overlap heavily.
        std::vector<char> hit(g.num_entities(), 0);
        for (EntityId v : memo[n.children[0]])
          for (EntityId t : g.neighbors(v, n.relation)) hit[t] = 1;
        for (EntityId v = 0; v < g.num_entities(); ++v)
          if (hit[v]) result.push_back(v);
        break;
      }
      case NodeKind::Intersection: {
        result = memo[n.children[0]];
        for (std::size_t c = 1; c < n.children.size(); ++c)
          result = set_intersection(result, memo[n.children[c]]);
        break;
      }
      case NodeKind::Union: {
        result = memo[n.children[0]];
        for (std::size_t c = 1; c < n.children.size(); ++c)
          result = set_union(result, memo[n.children[c]]);
        break;
      }
      case NodeKind::Complement: {
        const AnswerSet& child = memo[n.children[0]];
        result.reserve(g.num_entities() - child.size());
        std::size_t j = 0;
        for (EntityId v = 0; v < g.num_entities(); ++v) {
          if (j < child.size() && child[j] == v) {
            ++j;
          } else {
            result.push_back(v);
          }
        }
        break;
      }
    }
    memo[i] = std::move(result);
    done[i] = 1;
  }
  if (!done[q.target()]) throw ContractError("oracle did not reach the target node");
  return std::move(memo[q.target()]);
}

AnswerSet hard_answers(const Query& q, const KnowledgeGraph& larger,
                       const KnowledgeGraph& smaller) {
  AnswerSet big = answer(q, larger);
  AnswerSet small = answer(q, smaller);
  AnswerSet out;
  std::set_difference(big.begin(), big.end(), small.begin(), small.end(),
                      std::back_inserter(out));
  return out;
}

}  // namespace q2p
