// Shared helpers for the test binaries: a scratch directory, a random query
// generator, and a brute-force query evaluator kept deliberately independent
// of the production oracle (raw triple-list scans, std::set, recursion; no
// adjacency index, no memoization).
#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "q2p/kg.hpp"
#include "q2p/query.hpp"
#include "q2p/rng.hpp"

namespace q2p::testing {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("q2p_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name, const std::string& contents) {
    auto p = path / name;
    std::ofstream out(p, std::ios::binary);
    out << contents;
    return p.string();
  }
};

inline std::set<EntityId> brute_force_node(const Query& q, std::uint32_t node,
                                           const std::vector<Triple>& triples,
                                           std::size_t num_entities) {
  const QueryNode& n = q.node(node);
  switch (n.kind) {
    case NodeKind::Anchor:
      return {n.entity};
    case NodeKind::Projection: {
      std::set<EntityId> child = brute_force_node(q, n.children[0], triples, num_entities);
      std::set<EntityId> out;
      for (const Triple& t : triples)
        if (t.relation == n.relation && child.count(t.head)) out.insert(t.tail);
      return out;
    }
    case NodeKind::Intersection: {
      std::set<EntityId> acc = brute_force_node(q, n.children[0], triples, num_entities);
      for (std::size_t c = 1; c < n.children.size(); ++c) {
        std::set<EntityId> other = brute_force_node(q, n.children[c], triples, num_entities);
        std::set<EntityId> keep;
        for (EntityId v : acc)
          if (other.count(v)) keep.insert(v);
        acc = std::move(keep);
      }
      return acc;
    }
    case NodeKind::Union: {
      std::set<EntityId> acc;
      for (std::uint32_t c : n.children) {
        std::set<EntityId> part = brute_force_node(q, c, triples, num_entities);
        acc.insert(part.begin(), part.end());
      }
      return acc;
    }
    case NodeKind::Complement: {
      std::set<EntityId> child = brute_force_node(q, n.children[0], triples, num_entities);
      std::set<EntityId> out;
      for (EntityId v = 0; v < num_entities; ++v)
        if (!child.count(v)) out.insert(v);
      return out;
    }
  }
  return {};
}

inline std::vector<EntityId> brute_force_answer(const Query& q,
                                                const std::vector<Triple>& triples,
                                                std::size_t num_entities) {
  std::set<EntityId> s = brute_force_node(q, q.target(), triples, num_entities);
  return {s.begin(), s.end()};
}

// Random grammar-conforming tree. depth bounds nesting; at depth 0 only
// anchors are produced.
inline std::uint32_t random_tree(QueryBuilder& b, Rng& rng, std::size_t num_entities,
                                 std::size_t num_relations, int depth) {
  std::uint64_t kind = depth == 0 ? 0 : rng.below(5);
  switch (kind) {
    case 0:
      return b.anchor(static_cast<EntityId>(rng.below(num_entities)));
    case 1:
      return b.projection(static_cast<RelationId>(rng.below(num_relations)),
                          random_tree(b, rng, num_entities, num_relations, depth - 1));
    case 2:
    case 3: {
      std::vector<std::uint32_t> children;
      std::uint64_t n = 2 + rng.below(2);
      for (std::uint64_t i = 0; i < n; ++i)
        children.push_back(random_tree(b, rng, num_entities, num_relations, depth - 1));
      return kind == 2 ? b.intersection(std::move(children)) : b.union_of(std::move(children));
    }
    default:
      return b.complement(random_tree(b, rng, num_entities, num_relations, depth - 1));
  }
}

inline Query random_query(Rng& rng, std::size_t num_entities, std::size_t num_relations,
                          int depth) {
  QueryBuilder b;
  std::uint32_t root = random_tree(b, rng, num_entities, num_relations, depth);
  return std::move(b).finish(root);
}

inline std::vector<Triple> random_triples(Rng& rng, std::uint32_t n_entities,
                                          std::uint32_t n_relations, std::size_t n_edges) {
  std::vector<Triple> out;
  out.reserve(n_edges);
  for (std::size_t i = 0; i < n_edges; ++i) {
    out.push_back({static_cast<EntityId>(rng.below(n_entities)),
                   static_cast<RelationId>(rng.below(n_relations)),
                   static_cast<EntityId>(rng.below(n_entities))});
  }
  return out;
}

}  // namespace q2p::testing
