#include "q2p/toykg.hpp"

#include <filesystem>
#include <fstream>

#include "q2p/rng.hpp"

namespace q2p {

namespace {

struct EdgeBuckets {
  std::vector<Triple> train, valid_extra, test_extra;
};

// Draw order is fixed: one keep/drop draw per candidate edge, one split draw
// per kept edge. Output depends only on the config.
EdgeBuckets draw_edges(const ToyKgConfig& cfg) {
  Rng rng = Rng(cfg.seed).derive("toykg");
  EdgeBuckets out;
  for (std::size_t h = 0; h < cfg.num_entities(); ++h) {
    const std::size_t cluster = h / cfg.cluster_size;
    for (std::size_t r = 0; r < cfg.num_relations; ++r) {
      const std::size_t target = (cluster + r + 1) % cfg.clusters;
      for (std::size_t j = 0; j < cfg.cluster_size; ++j) {
        if (!rng.bernoulli(cfg.edge_prob)) continue;
        const Triple t{static_cast<EntityId>(h), static_cast<RelationId>(r),
                       static_cast<EntityId>(target * cfg.cluster_size + j)};
        const double u = rng.uniform();
        if (u < cfg.train_cut)
          out.train.push_back(t);
        else if (u < cfg.valid_cut)
          out.valid_extra.push_back(t);
        else
          out.test_extra.push_back(t);
      }
    }
  }
  return out;
}

}  // namespace

void ToyKgConfig::validate() const {
  if (clusters < 2) throw InputError("toy graph needs at least 2 clusters");
  if (cluster_size == 0) throw InputError("toy graph cluster size must be positive");
  if (num_relations == 0) throw InputError("toy graph needs at least 1 relation");
  if (!(edge_prob > 0.0 && edge_prob <= 1.0))
    throw InputError("toy graph edge probability must lie in (0, 1]");
  if (!(0.0 < train_cut && train_cut < valid_cut && valid_cut < 1.0))
    throw InputError("toy graph split cuts must satisfy 0 < train < valid < 1");
}

GraphSplits generate_toy_splits(const ToyKgConfig& cfg) {
  cfg.validate();
  EdgeBuckets edges = draw_edges(cfg);

  GraphSplits splits;
  for (std::size_t i = 0; i < cfg.num_entities(); ++i)
    splits.vocabs.entities.intern("e" + std::to_string(i));
  for (std::size_t i = 0; i < cfg.num_relations; ++i)
    splits.vocabs.relations.intern("r" + std::to_string(i));

  std::vector<Triple> acc = edges.train;
  splits.train = KnowledgeGraph::build(acc, cfg.num_entities(), cfg.num_relations);
  acc.insert(acc.end(), edges.valid_extra.begin(), edges.valid_extra.end());
  splits.valid = KnowledgeGraph::build(acc, cfg.num_entities(), cfg.num_relations);
  acc.insert(acc.end(), edges.test_extra.begin(), edges.test_extra.end());
  splits.test = KnowledgeGraph::build(acc, cfg.num_entities(), cfg.num_relations);
  return splits;
}

void write_toy_triples(const ToyKgConfig& cfg, const std::string& dir) {
  cfg.validate();
  EdgeBuckets edges = draw_edges(cfg);

  std::filesystem::create_directories(dir);
  const auto dump = [&](const char* name, const std::vector<Triple>& triples) {
    const auto path = std::filesystem::path(dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const Triple& t : triples)
      out << 'e' << t.head << '\t' << 'r' << t.relation << '\t' << 'e' << t.tail << '\n';
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
  };
  dump("train.tsv", edges.train);
  dump("valid.tsv", edges.valid_extra);
  dump("test.tsv", edges.test_extra);
}

}  // namespace q2p
