#include "q2p/query.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "q2p/errors.hpp"

namespace q2p {

namespace {

void validate_node(const std::vector<QueryNode>& nodes, std::uint32_t i) {
  const QueryNode& n = nodes[i];
  for (std::uint32_t c : n.children) {
    if (c >= i) throw ContractError("query node " + std::to_string(i) + " has child " + std::to_string(c) + " not preceding it");
  }
  switch (n.kind) {
    case NodeKind::Anchor:
      if (!n.children.empty()) throw ContractError("anchor node with children");
      break;
    case NodeKind::Projection:
    case NodeKind::Complement:
      if (n.children.size() != 1) throw ContractError("unary query node with child count " + std::to_string(n.children.size()));
      break;
    case NodeKind::Intersection:
    case NodeKind::Union:
      if (n.children.size() < 2) throw ContractError("intersection/union node with fewer than 2 children");
      break;
  }
}

}  // namespace

Query Query::from_nodes(std::vector<QueryNode> nodes, std::uint32_t target) {
  if (nodes.empty()) throw ContractError("query with no nodes");
  if (target >= nodes.size()) throw ContractError("query target out of range");
  for (std::uint32_t i = 0; i < nodes.size(); ++i) validate_node(nodes, i);

  std::vector<char> reach(nodes.size(), 0);
  reach[target] = 1;
  for (std::uint32_t i = target + 1; i-- > 0;) {
    if (!reach[i]) continue;
    for (std::uint32_t c : nodes[i].children) reach[c] = 1;
  }
  if (std::find(reach.begin(), reach.end(), 0) != reach.end())
    throw ContractError("query has nodes unreachable from the target");

  Query q;
  q.nodes_ = std::move(nodes);
  q.target_ = target;
  return q;
}

Query Query::anchor(EntityId e) {
  QueryNode n;
  n.kind = NodeKind::Anchor;
  n.entity = e;
  return from_nodes({n}, 0);
}

std::uint32_t QueryBuilder::anchor(EntityId e) {
  QueryNode n;
  n.kind = NodeKind::Anchor;
  n.entity = e;
  nodes_.push_back(std::move(n));
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

std::uint32_t QueryBuilder::projection(RelationId r, std::uint32_t child) {
  QueryNode n;
  n.kind = NodeKind::Projection;
  n.relation = r;
  n.children = {child};
  nodes_.push_back(std::move(n));
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

std::uint32_t QueryBuilder::intersection(std::vector<std::uint32_t> children) {
  QueryNode n;
  n.kind = NodeKind::Intersection;
  n.children = std::move(children);
  nodes_.push_back(std::move(n));
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

std::uint32_t QueryBuilder::union_of(std::vector<std::uint32_t> children) {
  QueryNode n;
  n.kind = NodeKind::Union;
  n.children = std::move(children);
  nodes_.push_back(std::move(n));
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

std::uint32_t QueryBuilder::complement(std::uint32_t child) {
  QueryNode n;
  n.kind = NodeKind::Complement;
  n.children = {child};
  nodes_.push_back(std::move(n));
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

Query QueryBuilder::finish(std::uint32_t target) && {
  return Query::from_nodes(std::move(nodes_), target);
}

std::string_view to_string(QueryType t) {
  switch (t) {
    case QueryType::q1p: return "1p";
    case QueryType::q2p: return "2p";
    case QueryType::q3p: return "3p";
    case QueryType::q2i: return "2i";
    case QueryType::q3i: return "3i";
    case QueryType::qpi: return "pi";
    case QueryType::qip: return "ip";
    case QueryType::q2u: return "2u";
    case QueryType::qup: return "up";
    case QueryType::q2in: return "2in";
    case QueryType::q3in: return "3in";
    case QueryType::qinp: return "inp";
    case QueryType::qpin: return "pin";
    case QueryType::qpni: return "pni";
    case QueryType::other: return "other";
  }
  throw ContractError("unhandled query type tag");
}

QueryType query_type_from_string(std::string_view s) {
  for (QueryType t : all_types())
    if (to_string(t) == s) return t;
  if (s == "other") return QueryType::other;
  throw InputError("unknown query type tag '" + std::string(s) + "'");
}

std::span<const QueryType> supervised_types() {
  static constexpr std::array<QueryType, 10> kTypes = {
      QueryType::q1p, QueryType::q2p, QueryType::q3p, QueryType::q2i, QueryType::q3i,
      QueryType::q2in, QueryType::q3in, QueryType::qinp, QueryType::qpin, QueryType::qpni,
  };
  return {kTypes.data(), kTypes.size()};
}

std::span<const QueryType> all_types() {
  static constexpr std::array<QueryType, kNumQueryTypes> kTypes = {
      QueryType::q1p, QueryType::q2p, QueryType::q3p, QueryType::q2i, QueryType::q3i,
      QueryType::qpi, QueryType::qip, QueryType::q2u, QueryType::qup,
      QueryType::q2in, QueryType::q3in, QueryType::qinp, QueryType::qpin, QueryType::qpni,
  };
  return {kTypes.data(), kTypes.size()};
}

namespace {

// Recursive-descent s-expression parser. Positions in errors are 0-based byte
// offsets into the input.
class Parser {
 public:
  Parser(std::string_view text, const Vocabs& vocabs) : text_(text), vocabs_(vocabs) {}

  Query run() {
    std::uint32_t root = parse_node();
    skip_ws();
    if (pos_ != text_.size())
      throw ParseError("trailing input after query", pos_);
    return std::move(builder_).finish(root);
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c)
      throw ParseError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  std::string_view token() {
    std::size_t start = pos_;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) break;
      ++pos_;
    }
    if (pos_ == start) throw ParseError("expected a token", pos_);
    return text_.substr(start, pos_ - start);
  }

  std::uint32_t parse_node() {
    skip_ws();
    std::size_t open = pos_;
    expect('(');
    skip_ws();
    std::size_t head_pos = pos_;
    std::string_view head = token();
    std::uint32_t id;
    if (head == "a") {
      skip_ws();
      std::size_t tp = pos_;
      std::string_view label = token();
      auto e = vocabs_.entities.find(label);
      if (!e) throw ParseError("unknown entity label '" + std::string(label) + "'", tp);
      id = builder_.anchor(*e);
    } else if (head == "p") {
      skip_ws();
      std::size_t tp = pos_;
      std::string_view label = token();
      auto r = vocabs_.relations.find(label);
      if (!r) throw ParseError("unknown relation label '" + std::string(label) + "'", tp);
      std::uint32_t child = parse_node();
      id = builder_.projection(*r, child);
    } else if (head == "i" || head == "u") {
      std::vector<std::uint32_t> children;
      while (true) {
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] == ')') break;
        children.push_back(parse_node());
      }
      if (children.size() < 2)
        throw ParseError(std::string(head == "i" ? "intersection" : "union") + " needs at least 2 children", open);
      id = head == "i" ? builder_.intersection(std::move(children))
                       : builder_.union_of(std::move(children));
    } else if (head == "n") {
      std::uint32_t child = parse_node();
      id = builder_.complement(child);
    } else {
      throw ParseError("unknown operator '" + std::string(head) + "'", head_pos);
    }
    skip_ws();
    expect(')');
    return id;
  }

  std::string_view text_;
  const Vocabs& vocabs_;
  std::size_t pos_ = 0;
  QueryBuilder builder_;
};

void serialize_node(const Query& q, std::uint32_t i, const Vocabs& vocabs, std::string& out) {
  const QueryNode& n = q.node(i);
  switch (n.kind) {
    case NodeKind::Anchor:
      out += "(a ";
      out += vocabs.entities.label(n.entity);
      out += ')';
      break;
    case NodeKind::Projection:
      out += "(p ";
      out += vocabs.relations.label(n.relation);
      out += ' ';
      serialize_node(q, n.children[0], vocabs, out);
      out += ')';
      break;
    case NodeKind::Intersection:
    case NodeKind::Union:
      out += n.kind == NodeKind::Intersection ? "(i" : "(u";
      for (std::uint32_t c : n.children) {
        out += ' ';
        serialize_node(q, c, vocabs, out);
      }
      out += ')';
      break;
    case NodeKind::Complement:
      out += "(n ";
      serialize_node(q, n.children[0], vocabs, out);
      out += ')';
      break;
  }
}

bool nodes_equal(const Query& a, std::uint32_t ia, const Query& b, std::uint32_t ib) {
  const QueryNode& na = a.node(ia);
  const QueryNode& nb = b.node(ib);
  if (na.kind != nb.kind) return false;
  if (na.kind == NodeKind::Anchor && na.entity != nb.entity) return false;
  if (na.kind == NodeKind::Projection && na.relation != nb.relation) return false;
  if (na.children.size() != nb.children.size()) return false;
  for (std::size_t i = 0; i < na.children.size(); ++i)
    if (!nodes_equal(a, na.children[i], b, nb.children[i])) return false;
  return true;
}

// Shape signature ignoring ids; i/u children sorted so child order never
// affects classification.
std::string shape_signature(const Query& q, std::uint32_t i) {
  const QueryNode& n = q.node(i);
  switch (n.kind) {
    case NodeKind::Anchor:
      return "a";
    case NodeKind::Projection:
      return "(p " + shape_signature(q, n.children[0]) + ")";
    case NodeKind::Complement:
      return "(n " + shape_signature(q, n.children[0]) + ")";
    case NodeKind::Intersection:
    case NodeKind::Union: {
      std::vector<std::string> parts;
      parts.reserve(n.children.size());
      for (std::uint32_t c : n.children) parts.push_back(shape_signature(q, c));
      std::sort(parts.begin(), parts.end());
      std::string out = n.kind == NodeKind::Intersection ? "(i" : "(u";
      for (const std::string& p : parts) {
        out += ' ';
        out += p;
      }
      out += ')';
      return out;
    }
  }
  throw ContractError("unhandled node kind");
}

constexpr std::array<std::string_view, kNumQueryTypes> kPatternTexts = {
    "(p r (a e))",
    "(p r (p r (a e)))",
    "(p r (p r (p r (a e))))",
    "(i (p r (a e)) (p r (a e)))",
    "(i (p r (a e)) (p r (a e)) (p r (a e)))",
    "(i (p r (p r (a e))) (p r (a e)))",
    "(p r (i (p r (a e)) (p r (a e))))",
    "(u (p r (a e)) (p r (a e)))",
    "(p r (u (p r (a e)) (p r (a e))))",
    "(i (p r (a e)) (n (p r (a e))))",
    "(i (p r (a e)) (p r (a e)) (n (p r (a e))))",
    "(p r (i (p r (a e)) (n (p r (a e)))))",
    "(i (p r (p r (a e))) (n (p r (a e))))",
    "(i (n (p r (p r (a e)))) (p r (a e)))",
};

const Vocabs& pattern_vocabs() {
  static const Vocabs v = [] {
    Vocabs x;
    x.entities.intern("e");
    x.relations.intern("r");
    return x;
  }();
  return v;
}

const std::array<std::string, kNumQueryTypes>& type_signatures() {
  static const std::array<std::string, kNumQueryTypes> kSigs = [] {
    std::array<std::string, kNumQueryTypes> s;
    for (std::size_t i = 0; i < kNumQueryTypes; ++i) {
      Query q = parse_query(kPatternTexts[i], pattern_vocabs());
      s[i] = shape_signature(q, q.target());
    }
    return s;
  }();
  return kSigs;
}

}  // namespace

Query pattern_query(QueryType t) {
  auto i = static_cast<std::size_t>(t);
  if (i >= kNumQueryTypes)
    throw InputError("no structural template for query type 'other'");
  return parse_query(kPatternTexts[i], pattern_vocabs());
}

Query parse_query(std::string_view text, const Vocabs& vocabs) {
  return Parser(text, vocabs).run();
}

std::string serialize_query(const Query& q, const Vocabs& vocabs) {
  std::string out;
  serialize_node(q, q.target(), vocabs, out);
  return out;
}

bool structurally_equal(const Query& a, const Query& b) {
  return nodes_equal(a, a.target(), b, b.target());
}

QueryType classify_query(const Query& q) {
  std::string sig = shape_signature(q, q.target());
  const auto& sigs = type_signatures();
  for (std::size_t i = 0; i < sigs.size(); ++i)
    if (sigs[i] == sig) return static_cast<QueryType>(i);
  return QueryType::other;
}

std::vector<std::uint32_t> topological_order(const Query& q) {
  std::vector<std::uint32_t> order;
  order.reserve(q.size());
  std::vector<char> emitted(q.size(), 0);
  // Iterative post-order from the target; the second stack entry flag marks
  // whether children have been pushed already.
  std::vector<std::pair<std::uint32_t, bool>> stack;
  stack.emplace_back(q.target(), false);
  while (!stack.empty()) {
    auto [i, expanded] = stack.back();
    stack.pop_back();
    if (emitted[i]) continue;
    if (expanded) {
      emitted[i] = 1;
      order.push_back(i);
      continue;
    }
    stack.emplace_back(i, true);
    const QueryNode& n = q.node(i);
    for (std::uint32_t c = static_cast<std::uint32_t>(n.children.size()); c-- > 0;)
      stack.emplace_back(n.children[c], false);
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (std::uint32_t c : q.node(order[k]).children) {
      bool seen = false;
      for (std::size_t j = 0; j < k; ++j)
        if (order[j] == c) { seen = true; break; }
      if (!seen) throw ContractError("topological order violated child-before-parent");
    }
  }
  return order;
}

}  // namespace q2p
