#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "q2p/errors.hpp"

namespace q2p {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  auto operator<=>(const Triple&) const = default;
};

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const {
    return std::hash<std::string_view>{}(s);
  }
};

// Label <-> dense id mapping. Ids are assigned in first-appearance order,
// which makes loading deterministic for a fixed file order.
class Vocab {
 public:
  std::uint32_t intern(std::string_view label);
  std::optional<std::uint32_t> find(std::string_view label) const;
  const std::string& label(std::uint32_t id) const;
  std::size_t size() const { return labels_; }

  // JSON object mapping label -> id.
  std::string to_json() const;

 private:
  std::vector<std::string> by_id_;
  std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>> index_;
  std::size_t labels_ = 0;
};

struct Vocabs {
  Vocab entities;
  Vocab relations;
};

// Immutable multi-relational graph with a (head, relation) -> sorted tail set
// index. Construction deduplicates; lookups of absent pairs return an empty
// span.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  static KnowledgeGraph build(const std::vector<Triple>& triples,
                              std::size_t num_entities, std::size_t num_relations);

  std::span<const EntityId> neighbors(EntityId head, RelationId relation) const;

  std::size_t edge_count() const { return edges_; }
  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations() const { return num_relations_; }

  // Distinct edges, sorted by (head, relation, tail).
  std::vector<Triple> export_triples() const;

 private:
  static std::uint64_t key(EntityId h, RelationId r) {
    return (static_cast<std::uint64_t>(h) << 32) | r;
  }

  std::size_t num_entities_ = 0;
  std::size_t num_relations_ = 0;
  std::size_t edges_ = 0;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> index_;
};

// Nested graph splits sharing one vocabulary: the valid graph holds the train
// edges plus the validation increment, the test graph holds all edges.
struct GraphSplits {
  KnowledgeGraph train;
  KnowledgeGraph valid;
  KnowledgeGraph test;
  Vocabs vocabs;

  const KnowledgeGraph& by_name(std::string_view name) const;
};

// Reads `head<TAB>relation<TAB>tail` lines, interning unseen labels.
std::vector<Triple> load_triples(const std::string& path, Vocabs& vocabs);

// Loads three incremental triple files (train, validation increment, test
// increment) into nested graphs over a single merged vocabulary.
GraphSplits build_splits(const std::string& train_path, const std::string& valid_path,
                         const std::string& test_path);

}  // namespace q2p
