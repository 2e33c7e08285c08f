#include "q2p/gradsuite.hpp"

#include "q2p/model.hpp"
#include "q2p/query.hpp"

namespace q2p {

namespace {

// Slot order matches ModelParamsT::all(); the checker probes the leaves, so
// the bound set must be rebuilt from them on every evaluation.
BoundParamsT<double> bind_from_leaves(TapeT<double>& tape, const ModelConfig& cfg,
                                      const std::vector<TensorT<double>>& xs) {
  BoundParamsT<double> b;
  b.tape = &tape;
  b.cfg = &cfg;
  TensorT<double>* slots[] = {
      &b.entity_table,  &b.relation_table, &b.anchor_offset,
      &b.proj_update_w, &b.proj_update_u,  &b.proj_update_b,
      &b.proj_reset_w,  &b.proj_reset_u,   &b.proj_reset_b,
      &b.proj_trans_w,  &b.proj_trans_u,   &b.proj_trans_b,
      &b.proj_attn_q,   &b.proj_attn_k,    &b.proj_attn_v,
      &b.inter_attn_q,  &b.inter_attn_k,   &b.inter_attn_v,
      &b.inter_mlp_w1,  &b.inter_mlp_b1,   &b.inter_mlp_w2,  &b.inter_mlp_b2,
      &b.comp_attn_q,   &b.comp_attn_k,    &b.comp_attn_v,
      &b.comp_mlp_w1,   &b.comp_mlp_b1,    &b.comp_mlp_w2,   &b.comp_mlp_b2};
  if (xs.size() < 29) throw ContractError("gradient suite needs all 29 parameter leaves");
  for (std::size_t i = 0; i < 29; ++i) *slots[i] = xs[i];
  return b;
}

Vocabs numbered_vocabs(std::size_t entities, std::size_t relations) {
  Vocabs v;
  for (std::size_t i = 0; i < entities; ++i) v.entities.intern("e" + std::to_string(i));
  for (std::size_t i = 0; i < relations; ++i) v.relations.intern("r" + std::to_string(i));
  return v;
}

}  // namespace

std::vector<GradSuiteCase> gradient_suite(std::uint64_t seed, std::size_t K) {
  ModelConfig cfg;
  cfg.d = 6;
  cfg.K = K;
  cfg.dropout = 0.0;
  cfg.hidden = 5;
  cfg.label_smoothing = 0.2;
  cfg.validate();

  auto params = ModelParamsT<double>::init(cfg, 5, 3, Rng(seed));
  std::vector<TensorT<double>> xs;
  for (auto* p : params.all()) xs.push_back(p->value);

  Rng probe = Rng(seed).derive("probe");
  TensorT<double> P(cfg.d, K), P2(cfg.d, K);
  for (auto& v : P.data) v = probe.uniform(-1.0, 1.0);
  for (auto& v : P2.data) v = probe.uniform(-1.0, 1.0);

  std::vector<GradSuiteCase> out;
  auto run = [&](std::string name, double eps, std::size_t extra, const ScalarFn& f) {
    auto inputs = xs;
    if (extra >= 1) inputs.push_back(P);
    if (extra >= 2) inputs.push_back(P2);
    out.push_back({std::move(name), eps, finite_diff_check(f, inputs, eps)});
  };

  run("init_particles/score", 1e-5, 0, [&](TapeT<double>& t, const std::vector<TensorT<double>>& in) {
    auto bp = bind_from_leaves(t, cfg, in);
    return score(bp, init_particles(bp, EntityId(2)), EntityId(4));
  });
  run("project", 1e-5, 1, [&](TapeT<double>& t, const std::vector<TensorT<double>>& in) {
    auto bp = bind_from_leaves(t, cfg, in);
    Rng rng(0);
    return t.sum(project(bp, in[29], RelationId(1), Mode::eval, rng));
  });
  run("intersect", 1e-5, 2, [&](TapeT<double>& t, const std::vector<TensorT<double>>& in) {
    auto bp = bind_from_leaves(t, cfg, in);
    Rng rng(0);
    return t.sum(intersect(bp, {in[29], in[30]}, Mode::eval, rng));
  });
  run("complement", 1e-5, 1, [&](TapeT<double>& t, const std::vector<TensorT<double>>& in) {
    auto bp = bind_from_leaves(t, cfg, in);
    Rng rng(0);
    return t.sum(complement(bp, in[29], Mode::eval, rng));
  });
  run("union/score", 1e-5, 2, [&](TapeT<double>& t, const std::vector<TensorT<double>>& in) {
    auto bp = bind_from_leaves(t, cfg, in);
    return score(bp, union_particles(t, {in[29], in[30]}), EntityId(4));
  });

  auto vocabs = numbered_vocabs(5, 3);
  auto q_proj = parse_query("(p r0 (a e1))", vocabs);
  auto q_inter = parse_query("(i (a e0) (a e2))", vocabs);
  auto q_comp = parse_query("(n (a e3))", vocabs);
  auto q_union = parse_query("(u (a e0) (a e4))", vocabs);
  const std::pair<const Query*, EntityId> losses[] = {
      {&q_proj, 3}, {&q_inter, 4}, {&q_comp, 0}, {&q_union, 2}};
  const char* loss_names[] = {"loss/projection", "loss/intersection", "loss/negation",
                              "loss/union"};
  for (int i = 0; i < 4; ++i) {
    std::vector<std::pair<const Query*, EntityId>> batch = {losses[i]};
    run(loss_names[i], 1e-4, 0, [&](TapeT<double>& t, const std::vector<TensorT<double>>& in) {
      auto bp = bind_from_leaves(t, cfg, in);
      Rng rng(0);
      return batch_loss(bp, batch, Mode::eval, rng);
    });
  }
  return out;
}

}  // namespace q2p
