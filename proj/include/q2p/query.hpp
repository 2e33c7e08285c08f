#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "q2p/kg.hpp"

namespace q2p {

enum class NodeKind : std::uint8_t { Anchor, Projection, Intersection, Union, Complement };

struct QueryNode {
  NodeKind kind;
  EntityId entity = 0;     // Anchor only
  RelationId relation = 0; // Projection only
  std::vector<std::uint32_t> children;  // arena indices, always smaller than own index
};

// A rooted DAG of set operations in arena form. Children precede parents, the
// target is the only root. Anchors are the only leaves; intersections and
// unions have at least two children.
class Query {
 public:
  // Validates arity, child ordering, and reachability from the target.
  static Query from_nodes(std::vector<QueryNode> nodes, std::uint32_t target);

  static Query anchor(EntityId e);

  const QueryNode& node(std::uint32_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }
  std::uint32_t target() const { return target_; }

 private:
  Query() = default;
  std::vector<QueryNode> nodes_;
  std::uint32_t target_ = 0;
};

// Small builder used by the parser, the sampler, and tests. append_* return
// the index of the new node.
class QueryBuilder {
 public:
  std::uint32_t anchor(EntityId e);
  std::uint32_t projection(RelationId r, std::uint32_t child);
  std::uint32_t intersection(std::vector<std::uint32_t> children);
  std::uint32_t union_of(std::vector<std::uint32_t> children);
  std::uint32_t complement(std::uint32_t child);
  Query finish(std::uint32_t target) &&;

 private:
  std::vector<QueryNode> nodes_;
};

// The fourteen benchmark query structures plus a catch-all.
enum class QueryType : std::uint8_t {
  q1p, q2p, q3p, q2i, q3i, qpi, qip, q2u, qup,
  q2in, q3in, qinp, qpin, qpni,
  other,
};

inline constexpr std::size_t kNumQueryTypes = 14;

std::string_view to_string(QueryType t);
QueryType query_type_from_string(std::string_view s);  // InputError on unknown tag

// The ten types with training supervision; the remaining four (pi, ip, 2u,
// up) are evaluated zero-shot.
std::span<const QueryType> supervised_types();
std::span<const QueryType> all_types();

// Grammar: (a <entity>) | (p <relation> <node>) | (i <node> <node> ...)
//          | (u <node> <node> ...) | (n <node>)
Query parse_query(std::string_view text, const Vocabs& vocabs);
std::string serialize_query(const Query& q, const Vocabs& vocabs);

// Tree equality modulo arena layout.
bool structurally_equal(const Query& a, const Query& b);

// Matches the query against the fourteen structures, ignoring which concrete
// entities and relations appear; child order inside i/u is irrelevant.
QueryType classify_query(const Query& q);

// Structural template for a benchmark type; every entity and relation id is 0.
// Rejects `other`.
Query pattern_query(QueryType t);

// Children-before-parents ordering of the nodes reachable from the target,
// target last. Deterministic for a fixed query.
std::vector<std::uint32_t> topological_order(const Query& q);

}  // namespace q2p
