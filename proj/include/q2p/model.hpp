#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "q2p/errors.hpp"
#include "q2p/kg.hpp"
#include "q2p/query.hpp"
#include "q2p/rng.hpp"
#include "q2p/tensor.hpp"

namespace q2p {

enum class Mode { train, eval };

struct ModelConfig {
  std::size_t d = 400;          // embedding width
  std::size_t K = 3;            // particles per state
  double dropout = 0.1;         // train-mode rate on operation outputs
  double label_smoothing = 0.5;
  std::size_t hidden = 0;       // MLP hidden width; 0 means d
  double init_scale = 0.0;      // uniform init half-width; 0 means 1/sqrt(d)

  std::size_t hidden_width() const { return hidden ? hidden : d; }
  double effective_init_scale() const {
    return init_scale > 0.0 ? init_scale : 1.0 / std::sqrt(static_cast<double>(d));
  }

  void validate() const {
    if (d < 1) throw InputError("model.d must be at least 1");
    if (K < 1) throw InputError("model.K must be at least 1");
    if (dropout < 0.0 || dropout >= 1.0) throw InputError("model.dropout outside [0, 1)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw InputError("model.label_smoothing outside [0, 1)");
    if (init_scale < 0.0) throw InputError("model.init_scale must be non-negative");
  }
};

// All trainable state. The intersection and complement operations own
// separate attention and MLP weights; nothing is shared between them.
template <class S>
struct ModelParamsT {
  ModelConfig cfg;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;

  ParameterT<S> entity_table;    // |V| x d, rows are e_v
  ParameterT<S> relation_table;  // |R| x d, rows are e_l
  ParameterT<S> anchor_offset;   // d x K added onto e_v to spread the initial particles

  ParameterT<S> proj_update_w, proj_update_u, proj_update_b;  // update gate
  ParameterT<S> proj_reset_w, proj_reset_u, proj_reset_b;     // reset gate
  ParameterT<S> proj_trans_w, proj_trans_u, proj_trans_b;     // transition candidate
  ParameterT<S> proj_attn_q, proj_attn_k, proj_attn_v;

  ParameterT<S> inter_attn_q, inter_attn_k, inter_attn_v;
  ParameterT<S> inter_mlp_w1, inter_mlp_b1, inter_mlp_w2, inter_mlp_b2;

  ParameterT<S> comp_attn_q, comp_attn_k, comp_attn_v;
  ParameterT<S> comp_mlp_w1, comp_mlp_b1, comp_mlp_w2, comp_mlp_b2;

  // Fixed parameter order; the checkpoint manifest and the optimizer state
  // both follow it.
  std::vector<ParameterT<S>*> all() {
    return {&entity_table,  &relation_table, &anchor_offset,
            &proj_update_w, &proj_update_u,  &proj_update_b,
            &proj_reset_w,  &proj_reset_u,   &proj_reset_b,
            &proj_trans_w,  &proj_trans_u,   &proj_trans_b,
            &proj_attn_q,   &proj_attn_k,    &proj_attn_v,
            &inter_attn_q,  &inter_attn_k,   &inter_attn_v,
            &inter_mlp_w1,  &inter_mlp_b1,   &inter_mlp_w2,  &inter_mlp_b2,
            &comp_attn_q,   &comp_attn_k,    &comp_attn_v,
            &comp_mlp_w1,   &comp_mlp_b1,    &comp_mlp_w2,   &comp_mlp_b2};
  }
  std::vector<const ParameterT<S>*> all() const {
    auto* self = const_cast<ModelParamsT*>(this);
    std::vector<const ParameterT<S>*> out;
    for (auto* p : self->all()) out.push_back(p);
    return out;
  }

  void zero_grads() {
    for (auto* p : all()) p->zero_grad();
  }

  // Weights and embeddings drawn uniformly from [-s, +s] with a dedicated
  // sub-stream per parameter name; biases start at zero.
  static ModelParamsT init(const ModelConfig& cfg, std::size_t num_entities,
                           std::size_t num_relations, const Rng& rng) {
    cfg.validate();
    if (num_entities < 1 || num_relations < 1)
      throw InputError("model needs non-empty entity and relation vocabularies");
    ModelParamsT p;
    p.cfg = cfg;
    p.num_entities = num_entities;
    p.num_relations = num_relations;
    const std::size_t d = cfg.d;
    const std::size_t h = cfg.hidden_width();
    const std::size_t K = cfg.K;

    auto weight = [&](ParameterT<S>& param, const char* name, std::size_t r, std::size_t c) {
      param = ParameterT<S>(name, TensorT<S>(r, c));
      Rng stream = rng.derive("init").derive(name);
      const double s = cfg.effective_init_scale();
      for (auto& v : param.value.data) v = static_cast<S>(stream.uniform(-s, s));
    };
    auto bias = [&](ParameterT<S>& param, const char* name, std::size_t r) {
      param = ParameterT<S>(name, TensorT<S>(r, 1));
    };

    weight(p.entity_table, "entity_table", num_entities, d);
    weight(p.relation_table, "relation_table", num_relations, d);
    weight(p.anchor_offset, "anchor_offset", d, K);
    weight(p.proj_update_w, "proj_update_w", d, d);
    weight(p.proj_update_u, "proj_update_u", d, d);
    bias(p.proj_update_b, "proj_update_b", d);
    weight(p.proj_reset_w, "proj_reset_w", d, d);
    weight(p.proj_reset_u, "proj_reset_u", d, d);
    bias(p.proj_reset_b, "proj_reset_b", d);
    weight(p.proj_trans_w, "proj_trans_w", d, d);
    weight(p.proj_trans_u, "proj_trans_u", d, d);
    bias(p.proj_trans_b, "proj_trans_b", d);
    weight(p.proj_attn_q, "proj_attn_q", d, d);
    weight(p.proj_attn_k, "proj_attn_k", d, d);
    weight(p.proj_attn_v, "proj_attn_v", d, d);
    weight(p.inter_attn_q, "inter_attn_q", d, d);
    weight(p.inter_attn_k, "inter_attn_k", d, d);
    weight(p.inter_attn_v, "inter_attn_v", d, d);
    weight(p.inter_mlp_w1, "inter_mlp_w1", h, d);
    bias(p.inter_mlp_b1, "inter_mlp_b1", h);
    weight(p.inter_mlp_w2, "inter_mlp_w2", d, h);
    bias(p.inter_mlp_b2, "inter_mlp_b2", d);
    weight(p.comp_attn_q, "comp_attn_q", d, d);
    weight(p.comp_attn_k, "comp_attn_k", d, d);
    weight(p.comp_attn_v, "comp_attn_v", d, d);
    weight(p.comp_mlp_w1, "comp_mlp_w1", h, d);
    bias(p.comp_mlp_b1, "comp_mlp_b1", h);
    weight(p.comp_mlp_w2, "comp_mlp_w2", d, h);
    bias(p.comp_mlp_b2, "comp_mlp_b2", d);
    return p;
  }
};

// Model parameters registered on one tape. Binding watches every parameter,
// so after backward each Parameter's grad holds its share (zero when the
// batch never touched it).
template <class S>
struct BoundParamsT {
  TapeT<S>* tape = nullptr;
  const ModelConfig* cfg = nullptr;
  TensorT<S> entity_table, relation_table, anchor_offset;
  TensorT<S> proj_update_w, proj_update_u, proj_update_b;
  TensorT<S> proj_reset_w, proj_reset_u, proj_reset_b;
  TensorT<S> proj_trans_w, proj_trans_u, proj_trans_b;
  TensorT<S> proj_attn_q, proj_attn_k, proj_attn_v;
  TensorT<S> inter_attn_q, inter_attn_k, inter_attn_v;
  TensorT<S> inter_mlp_w1, inter_mlp_b1, inter_mlp_w2, inter_mlp_b2;
  TensorT<S> comp_attn_q, comp_attn_k, comp_attn_v;
  TensorT<S> comp_mlp_w1, comp_mlp_b1, comp_mlp_w2, comp_mlp_b2;

  static BoundParamsT bind(TapeT<S>& tape, ModelParamsT<S>& params) {
    BoundParamsT b;
    b.tape = &tape;
    b.cfg = &params.cfg;
    TensorT<S>* slots[] = {
        &b.entity_table,  &b.relation_table, &b.anchor_offset,
        &b.proj_update_w, &b.proj_update_u,  &b.proj_update_b,
        &b.proj_reset_w,  &b.proj_reset_u,   &b.proj_reset_b,
        &b.proj_trans_w,  &b.proj_trans_u,   &b.proj_trans_b,
        &b.proj_attn_q,   &b.proj_attn_k,    &b.proj_attn_v,
        &b.inter_attn_q,  &b.inter_attn_k,   &b.inter_attn_v,
        &b.inter_mlp_w1,  &b.inter_mlp_b1,   &b.inter_mlp_w2,  &b.inter_mlp_b2,
        &b.comp_attn_q,   &b.comp_attn_k,    &b.comp_attn_v,
        &b.comp_mlp_w1,   &b.comp_mlp_b1,    &b.comp_mlp_w2,   &b.comp_mlp_b2};
    auto params_list = params.all();
    for (std::size_t i = 0; i < params_list.size(); ++i)
      *slots[i] = tape.watch(*params_list[i]);
    return b;
  }
};

namespace detail {

// Scaled dot-product self-attention over particles as tokens: each column of
// P is one token. Returns d x C like the input.
template <class S>
TensorT<S> self_attention(TapeT<S>& t, const TensorT<S>& P, const TensorT<S>& wq,
                          const TensorT<S>& wk, const TensorT<S>& wv) {
  auto X = t.transpose(P);  // C x d, rows are tokens
  auto Q = t.matmul(X, t.transpose(wq));
  auto K = t.matmul(X, t.transpose(wk));
  auto V = t.matmul(X, t.transpose(wv));
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(P.rows));
  auto weights = t.softmax_rows(t.scale(t.matmul(Q, t.transpose(K)), inv_sqrt_d));
  return t.transpose(t.matmul(weights, V));
}

// Two affine layers with one ReLU, applied per column.
template <class S>
TensorT<S> mlp2(TapeT<S>& t, const TensorT<S>& x, const TensorT<S>& w1, const TensorT<S>& b1,
                const TensorT<S>& w2, const TensorT<S>& b2) {
  auto hidden = t.relu(t.add(t.matmul(w1, x), b1));
  return t.add(t.matmul(w2, hidden), b2);
}

template <class S>
TensorT<S> maybe_dropout(const BoundParamsT<S>& bp, TensorT<S> x, Mode mode, Rng& rng) {
  if (mode == Mode::train && bp.cfg->dropout > 0.0)
    return bp.tape->dropout(x, bp.cfg->dropout, rng);
  return x;
}

}  // namespace detail

// P0 = e_v + M: the entity embedding broadcast over the K offset columns.
template <class S>
TensorT<S> init_particles(const BoundParamsT<S>& bp, EntityId v) {
  auto e = bp.tape->embedding_lookup(bp.entity_table, v);
  return bp.tape->add(bp.anchor_offset, e);
}

// Gated per-particle transition followed by self-attention across particles.
template <class S>
TensorT<S> project(const BoundParamsT<S>& bp, const TensorT<S>& P, RelationId l, Mode mode,
                   Rng& rng) {
  TapeT<S>& t = *bp.tape;
  if (P.rows != bp.cfg->d)
    throw ShapeError("project input row count " + std::to_string(P.rows) +
                     " does not match d=" + std::to_string(bp.cfg->d));
  auto el = t.embedding_lookup(bp.relation_table, l);
  auto gate_pre = [&](const TensorT<S>& w, const TensorT<S>& u, const TensorT<S>& b,
                      const TensorT<S>& x) {
    return t.add(t.add(t.matmul(u, x), t.matmul(w, el)), b);
  };
  auto Z = t.sigmoid(gate_pre(bp.proj_update_w, bp.proj_update_u, bp.proj_update_b, P));
  auto R = t.sigmoid(gate_pre(bp.proj_reset_w, bp.proj_reset_u, bp.proj_reset_b, P));
  auto T = t.tanh(gate_pre(bp.proj_trans_w, bp.proj_trans_u, bp.proj_trans_b, t.hadamard(R, P)));
  // (1 - Z) ⊙ P + Z ⊙ T, written as P - Z⊙P + Z⊙T
  auto A = t.add(t.add(P, t.negate(t.hadamard(Z, P))), t.hadamard(Z, T));
  auto out = detail::self_attention(t, A, bp.proj_attn_q, bp.proj_attn_k, bp.proj_attn_v);
  return detail::maybe_dropout(bp, out, mode, rng);
}

// Eval-mode thinning keeps evenly spaced columns: position round(i*total/K)
// for i in [0, K).
inline std::vector<std::size_t> intersect_eval_positions(std::size_t total, std::size_t K) {
  if (K < 1 || total < K) throw ContractError("cannot keep " + std::to_string(K) + " of " +
                                              std::to_string(total) + " columns");
  std::vector<std::size_t> picks;
  picks.reserve(K);
  for (std::size_t i = 0; i < K; ++i) {
    auto pos = static_cast<std::size_t>(std::llround(
        static_cast<double>(i) * static_cast<double>(total) / static_cast<double>(K)));
    picks.push_back(std::min(pos, total - 1));
  }
  return picks;
}

// Merge all inputs column-wise, attend, run the intersection MLP, then thin
// the columns back to K: evenly spaced picks in eval mode, a seeded draw
// without replacement in train mode.
template <class S>
TensorT<S> intersect(const BoundParamsT<S>& bp, const std::vector<TensorT<S>>& inputs, Mode mode,
                     Rng& rng) {
  TapeT<S>& t = *bp.tape;
  if (inputs.size() < 2) throw ContractError("intersect needs at least 2 inputs");
  auto merged = t.concat_columns(inputs);
  const std::size_t total = merged.cols;
  const std::size_t K = bp.cfg->K;
  if (total < K)
    throw ContractError("intersect has " + std::to_string(total) +
                        " candidate particles, fewer than K=" + std::to_string(K));
  auto attended =
      detail::self_attention(t, merged, bp.inter_attn_q, bp.inter_attn_k, bp.inter_attn_v);
  auto mixed = detail::mlp2(t, attended, bp.inter_mlp_w1, bp.inter_mlp_b1, bp.inter_mlp_w2,
                            bp.inter_mlp_b2);

  std::vector<std::size_t> picks = mode == Mode::eval
                                       ? intersect_eval_positions(total, K)
                                       : rng.sample_without_replacement(total, K);
  std::vector<TensorT<S>> columns;
  columns.reserve(K);
  for (std::size_t pos : picks) columns.push_back(t.slice_columns(mixed, pos, 1));
  auto out = t.concat_columns(columns);
  return detail::maybe_dropout(bp, out, mode, rng);
}

// Attention plus the complement-specific MLP; moves particles relative to
// where the inputs sit.
template <class S>
TensorT<S> complement(const BoundParamsT<S>& bp, const TensorT<S>& P, Mode mode, Rng& rng) {
  TapeT<S>& t = *bp.tape;
  if (P.rows != bp.cfg->d)
    throw ShapeError("complement input row count " + std::to_string(P.rows) +
                     " does not match d=" + std::to_string(bp.cfg->d));
  auto attended = detail::self_attention(t, P, bp.comp_attn_q, bp.comp_attn_k, bp.comp_attn_v);
  auto out = detail::mlp2(t, attended, bp.comp_mlp_w1, bp.comp_mlp_b1, bp.comp_mlp_w2,
                          bp.comp_mlp_b2);
  return detail::maybe_dropout(bp, out, mode, rng);
}

// Column concatenation; no parameters. Output keeps every input particle.
template <class S>
TensorT<S> union_particles(TapeT<S>& tape, const std::vector<TensorT<S>>& inputs) {
  if (inputs.size() < 2) throw ContractError("union needs at least 2 inputs");
  for (const auto& p : inputs)
    if (p.rows != inputs[0].rows)
      throw ShapeError("union inputs disagree on d: " + std::to_string(inputs[0].rows) + " vs " +
                       std::to_string(p.rows));
  return tape.concat_columns(inputs);
}

// Walks the query DAG bottom-up, applying the operation matching each node.
// The returned state has K columns unless the target is a union (then N*K).
template <class S>
TensorT<S> embed_query(const BoundParamsT<S>& bp, const Query& q, Mode mode, Rng& rng) {
  std::vector<TensorT<S>> states(q.size());
  for (std::uint32_t i : topological_order(q)) {
    const QueryNode& n = q.node(i);
    switch (n.kind) {
      case NodeKind::Anchor:
        states[i] = init_particles(bp, n.entity);
        break;
      case NodeKind::Projection:
        states[i] = project(bp, states[n.children[0]], n.relation, mode, rng);
        break;
      case NodeKind::Intersection: {
        std::vector<TensorT<S>> inputs;
        inputs.reserve(n.children.size());
        for (std::uint32_t c : n.children) inputs.push_back(states[c]);
        states[i] = intersect(bp, inputs, mode, rng);
        break;
      }
      case NodeKind::Union: {
        std::vector<TensorT<S>> inputs;
        inputs.reserve(n.children.size());
        for (std::uint32_t c : n.children) inputs.push_back(states[c]);
        states[i] = union_particles(*bp.tape, inputs);
        break;
      }
      case NodeKind::Complement:
        states[i] = complement(bp, states[n.children[0]], mode, rng);
        break;
    }
  }
  return states[q.target()];
}

// max_k <p^(k), e_v> as a scalar tensor.
template <class S>
TensorT<S> score(const BoundParamsT<S>& bp, const TensorT<S>& particles, EntityId v) {
  TapeT<S>& t = *bp.tape;
  auto e = t.embedding_lookup(bp.entity_table, v);
  auto per_particle = t.transpose(t.matmul(t.transpose(particles), e));  // 1 x C
  return t.max_over_columns(per_particle).first;
}

// Scores for every entity at once: E * P gives all inner products, the
// row-wise max collapses the particle axis.
template <class S>
TensorT<S> score_all(const BoundParamsT<S>& bp, const TensorT<S>& particles) {
  TapeT<S>& t = *bp.tape;
  return t.max_over_columns(t.matmul(bp.entity_table, particles)).first;
}

// Mean smoothed cross entropy over (query, answer) pairs against the full
// entity vocabulary.
template <class S>
TensorT<S> batch_loss(const BoundParamsT<S>& bp,
                      const std::vector<std::pair<const Query*, EntityId>>& batch, Mode mode,
                      Rng& rng) {
  TapeT<S>& t = *bp.tape;
  if (batch.empty()) throw ContractError("batch_loss over an empty batch");
  TensorT<S> acc;
  bool first = true;
  for (const auto& [query, answer] : batch) {
    if (answer >= bp.entity_table.rows)
      throw InputError("answer entity id " + std::to_string(answer) + " out of range");
    auto particles = embed_query(bp, *query, mode, rng);
    auto logits = score_all(bp, particles);
    auto li = t.cross_entropy_smoothed(logits, answer, bp.cfg->label_smoothing);
    acc = first ? li : t.add(acc, li);
    first = false;
  }
  return t.scale(acc, S(1) / static_cast<S>(batch.size()));
}

using ModelParams = ModelParamsT<float>;
using BoundParams = BoundParamsT<float>;

}  // namespace q2p
