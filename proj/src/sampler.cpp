#include "q2p/sampler.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include <nlohmann/json.hpp>

#include "q2p/errors.hpp"

namespace q2p {

namespace {

using nlohmann::json;

}  // namespace

ReverseIndex::ReverseIndex(const KnowledgeGraph& g) {
  incoming_.resize(g.num_entities());
  for (const Triple& t : g.export_triples())
    incoming_[t.tail].emplace_back(t.head, t.relation);
  for (EntityId v = 0; v < incoming_.size(); ++v)
    if (!incoming_[v].empty()) candidates_.push_back(v);
}

std::span<const std::pair<EntityId, RelationId>> ReverseIndex::incoming(EntityId tail) const {
  if (tail >= incoming_.size())
    throw InputError("entity id " + std::to_string(tail) + " out of range");
  return incoming_[tail];
}

namespace {

// One backward walk over the structural template. Returns the built node
// index, or nothing when the walk dead-ends (an entity without incoming
// edges). Negated and non-first union branches restart from a fresh random
// seed; everything else chases the target entity toward the anchors.
std::optional<std::uint32_t> walk_node(const Query& tmpl, std::uint32_t tn, EntityId target,
                                       const ReverseIndex& rev, Rng& rng, QueryBuilder& b) {
  auto fresh_seed = [&]() -> EntityId {
    auto c = rev.answer_candidates();
    return c[rng.below(c.size())];
  };
  const QueryNode& n = tmpl.node(tn);
  switch (n.kind) {
    case NodeKind::Anchor:
      return b.anchor(target);
    case NodeKind::Projection: {
      auto inc = rev.incoming(target);
      if (inc.empty()) return std::nullopt;
      auto [head, rel] = inc[rng.below(inc.size())];
      auto child = walk_node(tmpl, n.children[0], head, rev, rng, b);
      if (!child) return std::nullopt;
      return b.projection(rel, *child);
    }
    case NodeKind::Intersection: {
      std::vector<std::uint32_t> children;
      for (std::uint32_t c : n.children) {
        std::optional<std::uint32_t> built;
        if (tmpl.node(c).kind == NodeKind::Complement) {
          built = walk_node(tmpl, tmpl.node(c).children[0], fresh_seed(), rev, rng, b);
          if (built) built = b.complement(*built);
        } else {
          built = walk_node(tmpl, c, target, rev, rng, b);
        }
        if (!built) return std::nullopt;
        children.push_back(*built);
      }
      return b.intersection(std::move(children));
    }
    case NodeKind::Union: {
      std::vector<std::uint32_t> children;
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        auto built = walk_node(tmpl, n.children[i], i == 0 ? target : fresh_seed(), rev, rng, b);
        if (!built) return std::nullopt;
        children.push_back(*built);
      }
      return b.union_of(std::move(children));
    }
    case NodeKind::Complement: {
      auto built = walk_node(tmpl, n.children[0], fresh_seed(), rev, rng, b);
      if (!built) return std::nullopt;
      return b.complement(*built);
    }
  }
  return std::nullopt;
}

std::optional<Query> try_sample_once(const Query& tmpl, const ReverseIndex& rev, Rng& rng) {
  auto candidates = rev.answer_candidates();
  if (candidates.empty()) return std::nullopt;
  EntityId seed = candidates[rng.below(candidates.size())];
  QueryBuilder b;
  auto root = walk_node(tmpl, tmpl.target(), seed, rev, rng, b);
  if (!root) return std::nullopt;
  return std::move(b).finish(*root);
}

std::string join_ids(const AnswerSet& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

AnswerSet ids_from_json(const json& arr, const Vocabs& vocabs, const std::string& where) {
  if (!arr.is_array()) throw InputError(where + ": expected an array of entity ids");
  AnswerSet out;
  for (const auto& v : arr) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw InputError(where + ": entity ids must be non-negative integers");
    auto id = v.get<std::uint64_t>();
    if (id >= vocabs.entities.size())
      throw InputError(where + ": entity id " + std::to_string(id) + " outside the vocabulary");
    out.push_back(static_cast<EntityId>(id));
  }
  return out;
}

}  // namespace

Query sample_query(const KnowledgeGraph& g, const ReverseIndex& rev, QueryType t,
                   Rng& rng, std::size_t max_attempts) {
  if (t == QueryType::other) throw InputError("cannot sample query type 'other'");
  if (max_attempts < 1) throw InputError("max_attempts must be at least 1");
  Query tmpl = pattern_query(t);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    auto q = try_sample_once(tmpl, rev, rng);
    if (!q) continue;
    if (!answer(*q, g).empty()) return *q;
  }
  throw SamplingExhausted("no " + std::string(to_string(t)) +
                          " query with a non-empty answer set after " +
                          std::to_string(max_attempts) + " attempts");
}

std::string instance_to_json(const QueryInstance& inst, const Vocabs& vocabs) {
  std::string out = "{\"type\":\"";
  out += to_string(inst.type);
  out += "\",\"query\":";
  out += json(serialize_query(inst.query, vocabs)).dump();
  out += ",\"easy\":[";
  out += join_ids(inst.easy);
  out += "],\"hard\":[";
  out += join_ids(inst.hard);
  out += "],\"split\":\"";
  out += inst.split;
  out += "\"}";
  return out;
}

std::vector<SampleStats> generate_dataset(const GraphSplits& splits, const SampleConfig& cfg,
                                          const std::string& out_dir) {
  if (cfg.max_attempts < 1) throw InputError("max_attempts must be at least 1");
  std::filesystem::create_directories(out_dir);

  struct Bucket {
    const char* split;
    QueryType type;
    std::size_t requested;
    const KnowledgeGraph* sample_on;
    const KnowledgeGraph* easy_on;
    const KnowledgeGraph* hard_on;  // null: hard stays empty (train)
  };
  std::vector<Bucket> buckets;
  for (QueryType t : supervised_types())
    buckets.push_back({"train", t, cfg.train_per_type, &splits.train, &splits.train, nullptr});
  for (QueryType t : all_types())
    buckets.push_back({"valid", t, cfg.eval_per_type, &splits.valid, &splits.train, &splits.valid});
  for (QueryType t : all_types())
    buckets.push_back({"test", t, cfg.eval_per_type, &splits.test, &splits.valid, &splits.test});

  std::vector<SampleStats> stats;
  std::set<std::string> seen;  // per split; reset at split boundaries
  const char* current_split = "";
  std::ofstream out;
  Rng root(cfg.seed);

  for (const Bucket& bucket : buckets) {
    if (std::string_view(bucket.split) != current_split) {
      current_split = bucket.split;
      seen.clear();
      out = std::ofstream(std::filesystem::path(out_dir) / (std::string(bucket.split) + ".jsonl"),
                          std::ios::binary);
      if (!out) throw IoError("cannot write dataset file in " + out_dir);
    }
    SampleStats st;
    st.split = bucket.split;
    st.type = bucket.type;
    st.requested = bucket.requested;
    Rng rng = root.derive("sample").derive(bucket.split).derive(to_string(bucket.type));
    ReverseIndex rev(*bucket.sample_on);
    Query tmpl = pattern_query(bucket.type);

    for (std::size_t slot = 0; slot < bucket.requested; ++slot) {
      bool filled = false;
      for (std::size_t a = 0; a < cfg.max_attempts && !filled; ++a) {
        ++st.attempts;
        auto q = try_sample_once(tmpl, rev, rng);
        if (!q) continue;
        std::string text = serialize_query(*q, splits.vocabs);
        if (seen.count(text)) {
          ++st.duplicate_rejections;
          continue;
        }
        QueryInstance inst{std::move(*q), bucket.type, {}, {}, bucket.split};
        inst.easy = answer(inst.query, *bucket.easy_on);
        if (bucket.hard_on) {
          AnswerSet big = answer(inst.query, *bucket.hard_on);
          inst.hard.clear();
          std::set_difference(big.begin(), big.end(), inst.easy.begin(), inst.easy.end(),
                              std::back_inserter(inst.hard));
          if (inst.hard.empty()) {
            ++st.answer_rejections;
            continue;
          }
        } else if (inst.easy.empty()) {
          ++st.answer_rejections;
          continue;
        }
        out << instance_to_json(inst, splits.vocabs) << '\n';
        seen.insert(std::move(text));
        ++st.produced;
        filled = true;
      }
      // Supply exhausted: further slots in this bucket would burn the same
      // attempt budget for nothing.
      if (!filled) break;
    }
    stats.push_back(std::move(st));
  }
  out.close();

  for (const SampleStats& st : stats) {
    if (st.requested > 0 && st.produced == 0)
      throw SamplingExhausted("bucket " + st.split + "/" + std::string(to_string(st.type)) +
                              " produced no instances in " + std::to_string(st.attempts) +
                              " attempts");
  }
  return stats;
}

std::vector<QueryInstance> read_instances(const std::string& path, const Vocabs& vocabs) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open instance file: " + path);
  std::vector<QueryInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what(), lineno);
    }
    if (!rec.is_object() || !rec.contains("type") || !rec.contains("query") ||
        !rec.contains("easy") || !rec.contains("hard") || !rec.contains("split"))
      throw ParseError(where + ": expected keys type, query, easy, hard, split", lineno);
    if (!rec["type"].is_string() || !rec["query"].is_string() || !rec["split"].is_string())
      throw ParseError(where + ": type, query, split must be strings", lineno);

    QueryInstance inst{Query::anchor(0), QueryType::other, {}, {}, {}};
    inst.type = query_type_from_string(rec["type"].get<std::string>());
    inst.split = rec["split"].get<std::string>();
    if (inst.split != "train" && inst.split != "valid" && inst.split != "test")
      throw ParseError(where + ": split must be train, valid, or test", lineno);
    try {
      inst.query = parse_query(rec["query"].get<std::string>(), vocabs);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what(), lineno);
    }
    if (classify_query(inst.query) != inst.type)
      throw ParseError(where + ": query structure does not match declared type '" +
                           std::string(to_string(inst.type)) + "'",
                       lineno);
    inst.easy = ids_from_json(rec["easy"], vocabs, where);
    inst.hard = ids_from_json(rec["hard"], vocabs, where);
    if (!std::is_sorted(inst.easy.begin(), inst.easy.end()) ||
        std::adjacent_find(inst.easy.begin(), inst.easy.end()) != inst.easy.end())
      throw ParseError(where + ": easy answers must be strictly ascending", lineno);
    if (!std::is_sorted(inst.hard.begin(), inst.hard.end()) ||
        std::adjacent_find(inst.hard.begin(), inst.hard.end()) != inst.hard.end())
      throw ParseError(where + ": hard answers must be strictly ascending", lineno);
    out.push_back(std::move(inst));
  }
  if (in.bad()) throw IoError("read error on instance file: " + path);
  return out;
}

namespace {

std::string shape_of(const json& node) {
  std::string s = node.dump();
  if (s.size() > 120) s = s.substr(0, 117) + "...";
  return s;
}

bool is_int_chain(const json& node) {
  if (!node.is_array() || node.empty()) return false;
  for (const auto& e : node)
    if (!e.is_number_integer()) return false;
  return true;
}

std::uint32_t convert_tuple(const json& node, QueryBuilder& b, const Vocabs& vocabs) {
  if (!node.is_array() || node.size() < 2)
    throw InputError("unsupported query tuple shape: " + shape_of(node));

  const json& last = node.back();
  const bool union_marker =
      last.is_array() && last.size() == 1 && last[0].is_number_integer() &&
      last[0].get<std::int64_t>() == -1;
  if (union_marker) {
    if (node.size() < 3)
      throw InputError("union tuple needs at least two branches: " + shape_of(node));
    std::vector<std::uint32_t> children;
    for (std::size_t i = 0; i + 1 < node.size(); ++i)
      children.push_back(convert_tuple(node[i], b, vocabs));
    return b.union_of(std::move(children));
  }

  if (node.size() == 2 && is_int_chain(node[1])) {
    std::uint32_t cur;
    if (node[0].is_number_integer()) {
      auto e = node[0].get<std::int64_t>();
      if (e < 0 || static_cast<std::uint64_t>(e) >= vocabs.entities.size())
        throw InputError("entity id " + std::to_string(e) + " outside the vocabulary");
      cur = b.anchor(static_cast<EntityId>(e));
    } else if (node[0].is_array()) {
      cur = convert_tuple(node[0], b, vocabs);
    } else {
      throw InputError("unsupported query tuple shape: " + shape_of(node));
    }
    for (const auto& step : node[1]) {
      auto r = step.get<std::int64_t>();
      if (r == -2) {
        cur = b.complement(cur);
      } else if (r >= 0 && static_cast<std::uint64_t>(r) < vocabs.relations.size()) {
        cur = b.projection(static_cast<RelationId>(r), cur);
      } else {
        throw InputError("relation id " + std::to_string(r) + " outside the vocabulary");
      }
    }
    return cur;
  }

  bool all_arrays = true;
  for (const auto& e : node)
    if (!e.is_array()) all_arrays = false;
  if (all_arrays) {
    std::vector<std::uint32_t> children;
    for (const auto& e : node) children.push_back(convert_tuple(e, b, vocabs));
    return b.intersection(std::move(children));
  }
  throw InputError("unsupported query tuple shape: " + shape_of(node));
}

}  // namespace

std::vector<QueryInstance> import_benchmark(const std::string& path, const Vocabs& vocabs) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open benchmark file: " + path);
  std::vector<QueryInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what(), lineno);
    }
    if (!rec.is_object() || !rec.contains("type") || !rec.contains("query") ||
        !rec["type"].is_string())
      throw ParseError(where + ": expected an object with a type tag and a query tuple", lineno);

    QueryInstance inst{Query::anchor(0), QueryType::other, {}, {}, {}};
    inst.type = query_type_from_string(rec["type"].get<std::string>());
    inst.split = rec.value("split", std::string("test"));
    QueryBuilder b;
    std::uint32_t root;
    try {
      root = convert_tuple(rec["query"], b, vocabs);
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
    inst.query = std::move(b).finish(root);
    if (classify_query(inst.query) != inst.type)
      throw InputError(where + ": converted structure is " +
                       std::string(to_string(classify_query(inst.query))) +
                       ", file declares " + std::string(to_string(inst.type)));
    if (rec.contains("easy")) inst.easy = ids_from_json(rec["easy"], vocabs, where);
    if (rec.contains("hard")) inst.hard = ids_from_json(rec["hard"], vocabs, where);
    std::sort(inst.easy.begin(), inst.easy.end());
    inst.easy.erase(std::unique(inst.easy.begin(), inst.easy.end()), inst.easy.end());
    std::sort(inst.hard.begin(), inst.hard.end());
    inst.hard.erase(std::unique(inst.hard.begin(), inst.hard.end()), inst.hard.end());
    out.push_back(std::move(inst));
  }
  if (in.bad()) throw IoError("read error on benchmark file: " + path);
  return out;
}

}  // namespace q2p
