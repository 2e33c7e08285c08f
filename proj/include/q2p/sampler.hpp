#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "q2p/kg.hpp"
#include "q2p/oracle.hpp"
#include "q2p/query.hpp"
#include "q2p/rng.hpp"

namespace q2p {

// One dataset record: a query with its answer sets on the split's graph pair.
// Train instances carry all their answers in `easy` and an empty `hard` set;
// valid/test instances hold answers already reachable on the previous graph
// in `easy` and the newly reachable ones in `hard`.
struct QueryInstance {
  Query query;
  QueryType type = QueryType::other;
  AnswerSet easy;
  AnswerSet hard;
  std::string split;  // train | valid | test
};

struct SampleConfig {
  std::size_t train_per_type = 1000;  // per supervised type, on the train graph
  std::size_t eval_per_type = 200;    // per type and eval split, all 14 types
  std::uint64_t seed = 0;
  std::size_t max_attempts = 200;     // resample budget per emitted instance
};

// Per (split, type) sampling outcome. produced < requested happens when the
// graph cannot supply enough distinct queries within the attempt budget.
struct SampleStats {
  std::string split;
  QueryType type = QueryType::other;
  std::size_t requested = 0;
  std::size_t produced = 0;
  std::size_t attempts = 0;
  std::size_t duplicate_rejections = 0;
  std::size_t answer_rejections = 0;  // empty answers or empty hard answers
};

// tail -> incoming (head, relation) edges, for backward walks.
class ReverseIndex {
 public:
  explicit ReverseIndex(const KnowledgeGraph& g);

  std::span<const std::pair<EntityId, RelationId>> incoming(EntityId tail) const;
  // Entities with at least one incoming edge, ascending.
  std::span<const EntityId> answer_candidates() const { return candidates_; }

 private:
  std::vector<std::vector<std::pair<EntityId, RelationId>>> incoming_;
  std::vector<EntityId> candidates_;
};

// Draws one query of the requested structure by walking backward from a
// random seed entity, retrying until the answer set on g is non-empty.
// Throws SamplingExhausted when max_attempts random walks all fail.
Query sample_query(const KnowledgeGraph& g, const ReverseIndex& rev, QueryType t,
                   Rng& rng, std::size_t max_attempts = 200);

// Samples every configured (split, type) bucket and writes train.jsonl,
// valid.jsonl, test.jsonl under out_dir. Works through buckets in a fixed
// order with one generator derived per (split, type), so output bytes depend
// only on the seed. Throws SamplingExhausted if a bucket with a non-zero
// request produces nothing at all.
std::vector<SampleStats> generate_dataset(const GraphSplits& splits, const SampleConfig& cfg,
                                          const std::string& out_dir);

std::string instance_to_json(const QueryInstance& inst, const Vocabs& vocabs);

// Reads a JSON-lines instance file, revalidating that each stored type tag
// matches the parsed structure.
std::vector<QueryInstance> read_instances(const std::string& path, const Vocabs& vocabs);

// Converts records whose "query" field uses the benchmark's nested-array
// encoding: [e, [r...]] is a relation chain from an anchor, [sub, [r...]]
// a chain from a subquery, [b1, b2, ...] an intersection of branches, a
// trailing [-1] marks a union, and -2 inside a chain negates the set built
// so far. Entity/relation ints index the vocabularies directly.
std::vector<QueryInstance> import_benchmark(const std::string& path, const Vocabs& vocabs);

}  // namespace q2p
