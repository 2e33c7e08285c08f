#include "q2p/kg.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace q2p {

std::uint32_t Vocab::intern(std::string_view label) {
  auto it = index_.find(label);
  if (it != index_.end()) return it->second;
  auto id = static_cast<std::uint32_t>(by_id_.size());
  by_id_.emplace_back(label);
  index_.emplace(by_id_.back(), id);
  labels_ = by_id_.size();
  return id;
}

std::optional<std::uint32_t> Vocab::find(std::string_view label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::label(std::uint32_t id) const {
  if (id >= by_id_.size())
    throw InputError("vocabulary id " + std::to_string(id) + " out of range (size " +
                     std::to_string(by_id_.size()) + ")");
  return by_id_[id];
}

std::string Vocab::to_json() const {
  std::ostringstream out;
  out << "{";
  for (std::size_t i = 0; i < by_id_.size(); ++i) {
    if (i) out << ",";
    out << "\"";
    for (char c : by_id_[i]) {
      switch (c) {
        case '"': out << "\\\""; break;
        case '\\': out << "\\\\"; break;
        default: out << c;
      }
    }
    out << "\":" << i;
  }
  out << "}";
  return out.str();
}

KnowledgeGraph KnowledgeGraph::build(const std::vector<Triple>& triples,
                                     std::size_t num_entities, std::size_t num_relations) {
  KnowledgeGraph g;
  g.num_entities_ = num_entities;
  g.num_relations_ = num_relations;
  for (const Triple& t : triples) {
    if (t.head >= num_entities || t.tail >= num_entities)
      throw InputError("triple references entity id outside the vocabulary");
    if (t.relation >= num_relations)
      throw InputError("triple references relation id outside the vocabulary");
    g.index_[key(t.head, t.relation)].push_back(t.tail);
  }
  for (auto& [k, tails] : g.index_) {
    std::sort(tails.begin(), tails.end());
    tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
    g.edges_ += tails.size();
  }
  return g;
}

std::span<const EntityId> KnowledgeGraph::neighbors(EntityId head, RelationId relation) const {
  if (head >= num_entities_)
    throw InputError("entity id " + std::to_string(head) + " out of range");
  if (relation >= num_relations_)
    throw InputError("relation id " + std::to_string(relation) + " out of range");
  auto it = index_.find(key(head, relation));
  if (it == index_.end()) return {};
  return it->second;
}

std::vector<Triple> KnowledgeGraph::export_triples() const {
  std::vector<Triple> out;
  out.reserve(edges_);
  for (const auto& [k, tails] : index_) {
    auto head = static_cast<EntityId>(k >> 32);
    auto rel = static_cast<RelationId>(k & 0xffffffffu);
    for (EntityId tail : tails) out.push_back({head, rel, tail});
  }
  std::sort(out.begin(), out.end());
  return out;
}

const KnowledgeGraph& GraphSplits::by_name(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw InputError("unknown graph name '" + std::string(name) + "' (expected train|valid|test)");
}

std::vector<Triple> load_triples(const std::string& path, Vocabs& vocabs) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open triple file: " + path);

  std::vector<Triple> triples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                           ": expected 3 tab-separated fields",
                       lineno);
    }
    const std::string_view view = line;
    Triple t;
    t.head = vocabs.entities.intern(view.substr(0, t1));
    t.relation = vocabs.relations.intern(view.substr(t1 + 1, t2 - t1 - 1));
    t.tail = vocabs.entities.intern(view.substr(t2 + 1));
    triples.push_back(t);
  }
  if (in.bad()) throw IoError("read error on triple file: " + path);
  return triples;
}

GraphSplits build_splits(const std::string& train_path, const std::string& valid_path,
                         const std::string& test_path) {
  GraphSplits s;
  std::vector<Triple> acc = load_triples(train_path, s.vocabs);
  const std::vector<Triple> train_triples = acc;

  std::vector<Triple> more = load_triples(valid_path, s.vocabs);
  acc.insert(acc.end(), more.begin(), more.end());
  const std::vector<Triple> valid_triples = acc;

  more = load_triples(test_path, s.vocabs);
  acc.insert(acc.end(), more.begin(), more.end());

  // Graphs are built after all files are read so the three share the final
  // merged vocabulary.
  const std::size_t ne = s.vocabs.entities.size();
  const std::size_t nr = s.vocabs.relations.size();
  s.train = KnowledgeGraph::build(train_triples, ne, nr);
  s.valid = KnowledgeGraph::build(valid_triples, ne, nr);
  s.test = KnowledgeGraph::build(acc, ne, nr);
  return s;
}

}  // namespace q2p
