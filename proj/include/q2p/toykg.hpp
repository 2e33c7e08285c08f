#pragma once

#include <cstdint>
#include <string>

#include "q2p/kg.hpp"

namespace q2p {

// Synthetic clustered graph: entities live in `clusters` groups of
// `cluster_size`, and relation r connects cluster c to cluster
// (c + r + 1) mod clusters. Each candidate edge is kept with probability
// edge_prob, then routed to train / validation increment / test increment by
// a second uniform draw against the two cut points. With the defaults the
// validation graph withholds ~10% of all edges and the train graph ~10% of
// those again, which leaves hard answers at every split boundary. The default
// density is low enough that multi-hop neighborhoods do not swallow whole
// clusters; saturated neighborhoods stop growing across splits and starve
// deeper query shapes of hard answers.
struct ToyKgConfig {
  std::size_t clusters = 10;
  std::size_t cluster_size = 10;
  std::size_t num_relations = 6;
  double edge_prob = 0.3;
  double train_cut = 0.81;
  double valid_cut = 0.90;
  std::uint64_t seed = 0;

  std::size_t num_entities() const { return clusters * cluster_size; }
  void validate() const;
};

// Builds the nested splits in memory. Entity ids follow label order e0..eN-1,
// relations r0..rM-1.
GraphSplits generate_toy_splits(const ToyKgConfig& cfg);

// Writes train.tsv, valid.tsv, test.tsv (the latter two holding only their
// increments) under dir, in the format build_splits reads back.
void write_toy_triples(const ToyKgConfig& cfg, const std::string& dir);

}  // namespace q2p
