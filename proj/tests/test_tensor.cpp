#include <cmath>

#include "doctest.h"
#include "q2p/errors.hpp"
#include "q2p/gradcheck.hpp"
#include "q2p/tensor.hpp"

using namespace q2p;

namespace {

Tensor64 randu(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(r, c);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul against identity and by hand") {
  Tape64 tape(false);
  Tensor64 a(2, 2, {1, 2, 3, 4});
  Tensor64 eye(2, 2, {1, 0, 0, 1});
  CHECK(tape.matmul(a, eye).data == std::vector<double>{1, 2, 3, 4});
  Tensor64 b(2, 3, {1, 2, 3, 4, 5, 6});
  auto c = tape.matmul(a, b);
  CHECK(c.rows == 2);
  CHECK(c.cols == 3);
  CHECK(c.data == std::vector<double>{9, 12, 15, 19, 26, 33});
  CHECK_THROWS_AS(tape.matmul(b, a), ShapeError);
}

TEST_CASE("elementwise forward values") {
  Tape64 tape(false);
  Tensor64 z(1, 2, {0, 0});
  CHECK(tape.sigmoid(z).data == std::vector<double>{0.5, 0.5});
  CHECK(tape.tanh(z).data == std::vector<double>{0, 0});
  Tensor64 x(1, 3, {-1, 0, 2});
  CHECK(tape.relu(x).data == std::vector<double>{0, 0, 2});
  CHECK(tape.negate(x).data == std::vector<double>{1, 0, -2});
  CHECK(tape.scale(x, 3.0).data == std::vector<double>{-3, 0, 6});
  CHECK(tape.sum(x).scalar() == 1.0);
}

TEST_CASE("softmax rows are normalized distributions") {
  Tape64 tape(false);
  Tensor64 z(1, 2, {0, 0});
  CHECK(tape.softmax_rows(z).data == std::vector<double>{0.5, 0.5});
  Rng rng(31);
  auto x = randu(rng, 5, 7, -30.0, 30.0);
  auto y = tape.softmax_rows(x);
  for (std::size_t i = 0; i < y.rows; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < y.cols; ++j) {
      CHECK(y.at(i, j) > 0.0);
      CHECK(y.at(i, j) < 1.0);
      s += y.at(i, j);
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("add broadcasts a column vector over matrix columns") {
  Tape64 tape(false);
  Tensor64 m(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor64 v(2, 1, {10, 20});
  CHECK(tape.add(m, v).data == std::vector<double>{11, 12, 13, 24, 25, 26});
  Tensor64 bad(3, 1, {1, 2, 3});
  CHECK_THROWS_AS(tape.add(m, bad), ShapeError);
}

TEST_CASE("hadamard requires matching shapes") {
  Tape64 tape(false);
  Tensor64 a(2, 2, {1, 2, 3, 4});
  Tensor64 b(2, 2, {5, 6, 7, 8});
  CHECK(tape.hadamard(a, b).data == std::vector<double>{5, 12, 21, 32});
  Tensor64 c(1, 4, {1, 2, 3, 4});
  CHECK_THROWS_AS(tape.hadamard(a, c), ShapeError);
}

TEST_CASE("gradient of sum of squares") {
  Tape64 tape;
  auto x = tape.leaf(Tensor64(1, 3, {1, 2, 3}));
  auto loss = tape.sum(tape.hadamard(x, x));
  CHECK(loss.scalar() == 14.0);
  tape.backward(loss);
  CHECK(tape.grad(x) == std::vector<double>{2, 4, 6});
}

TEST_CASE("cross entropy value and softmax-minus-target gradient") {
  Tape64 tape;
  auto logits = tape.leaf(Tensor64(3, 1, {1, 0, 0}));
  auto loss = tape.cross_entropy_smoothed(logits, 0, 0.0);
  const double e = std::exp(1.0);
  CHECK(loss.scalar() == doctest::Approx(-std::log(e / (e + 2.0))).epsilon(1e-12));
  tape.backward(loss);
  auto g = tape.grad(logits);
  const double p0 = e / (e + 2.0);
  const double p_rest = 1.0 / (e + 2.0);
  CHECK(g[0] == doctest::Approx(p0 - 1.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(p_rest).epsilon(1e-12));
  CHECK(g[2] == doctest::Approx(p_rest).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits is log n") {
  Tape64 tape(false);
  Tensor64 logits(7, 1, std::vector<double>(7, 0.42));
  CHECK(tape.cross_entropy_smoothed(logits, 3, 0.0).scalar() ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy input validation") {
  Tape64 tape(false);
  Tensor64 logits(3, 1, {1, 2, 3});
  CHECK_THROWS_AS(tape.cross_entropy_smoothed(logits, 5, 0.0), InputError);
  CHECK_THROWS_AS(tape.cross_entropy_smoothed(logits, 0, 1.0), InputError);
  Tensor64 row(1, 3, {1, 2, 3});
  CHECK_THROWS_AS(tape.cross_entropy_smoothed(row, 0, 0.0), ShapeError);
  Tensor64 inf(2, 1, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(tape.cross_entropy_smoothed(inf, 0, 0.0), NumericError);
}

TEST_CASE("max over columns routes gradient to the lowest tied index") {
  Tape64 tape;
  auto x = tape.leaf(Tensor64(2, 3, {5, 7, 7, 2, 2, 1}));
  auto [mx, arg] = tape.max_over_columns(x);
  CHECK(mx.data == std::vector<double>{7, 2});
  CHECK(arg == std::vector<std::size_t>{1, 0});
  auto loss = tape.sum(tape.scale(mx, 3.0));
  tape.backward(loss);
  CHECK(tape.grad(x) == std::vector<double>{0, 3, 0, 3, 0, 0});
}

TEST_CASE("concat and slice are inverse and route gradients") {
  Tape64 tape;
  auto a = tape.leaf(Tensor64(2, 2, {1, 2, 3, 4}));
  auto b = tape.leaf(Tensor64(2, 1, {9, 8}));
  auto cat = tape.concat_columns({a, b});
  CHECK(cat.cols == 3);
  CHECK(cat.data == std::vector<double>{1, 2, 9, 3, 4, 8});
  auto back = tape.slice_columns(cat, 2, 1);
  CHECK(back.data == std::vector<double>{9, 8});
  auto loss = tape.sum(back);
  tape.backward(loss);
  CHECK(tape.grad(a) == std::vector<double>{0, 0, 0, 0});
  CHECK(tape.grad(b) == std::vector<double>{1, 1});
  CHECK_THROWS_AS(tape.slice_columns(cat, 2, 2), ShapeError);
}

TEST_CASE("embedding lookup reads a row as a column and back-propagates into it") {
  Tape64 tape;
  auto table = tape.leaf(Tensor64(3, 2, {1, 2, 3, 4, 5, 6}));
  auto e = tape.embedding_lookup(table, 1);
  CHECK(e.rows == 2);
  CHECK(e.cols == 1);
  CHECK(e.data == std::vector<double>{3, 4});
  auto loss = tape.sum(tape.scale(e, 2.0));
  tape.backward(loss);
  CHECK(tape.grad(table) == std::vector<double>{0, 0, 2, 2, 0, 0});
  CHECK_THROWS_AS(tape.embedding_lookup(table, 3), InputError);
}

TEST_CASE("dropout rate zero is the identity and keeps the node") {
  Tape64 tape;
  Rng rng(5);
  auto x = tape.leaf(Tensor64(2, 2, {1, 2, 3, 4}));
  auto y = tape.dropout(x, 0.0, rng);
  CHECK(y.data == x.data);
  CHECK(y.node == x.node);
  CHECK_THROWS_AS(tape.dropout(x, 1.0, rng), InputError);
}

TEST_CASE("dropout scales kept entries and masks gradients identically") {
  Tape64 tape;
  Rng rng(6);
  Tensor64 xv(1, 1000);
  for (auto& v : xv.data) v = 1.0;
  auto x = tape.leaf(xv);
  auto y = tape.dropout(x, 0.25, rng);
  std::size_t kept = 0;
  for (double v : y.data) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 600);
  CHECK(kept < 900);
  auto loss = tape.sum(y);
  tape.backward(loss);
  auto g = tape.grad(x);
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == y.data[i]);  // x was all ones, so grad == mask == y
}

TEST_CASE("backward rejects misuse") {
  Tape64 tape;
  auto x = tape.leaf(Tensor64(1, 2, {1, 2}));
  CHECK_THROWS_AS(tape.grad(x), ContractError);
  CHECK_THROWS_AS(tape.backward(x), ContractError);  // not scalar
  auto loss = tape.sum(x);
  tape.backward(loss);
  tape.grad(x);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);  // second run
  Tape64 frozen(false);
  auto y = frozen.sum(Tensor64(1, 2, {1, 2}));
  CHECK_THROWS_AS(frozen.backward(y), ContractError);
}

TEST_CASE("constants receive no gradient and block propagation cleanly") {
  Tape64 tape;
  auto x = tape.leaf(Tensor64(2, 1, {1, 2}));
  Tensor64 constant(2, 1, {5, 5});
  auto loss = tape.sum(tape.hadamard(x, constant));
  tape.backward(loss);
  CHECK(tape.grad(x) == std::vector<double>{5, 5});
  CHECK_THROWS_AS(tape.grad(constant), ContractError);
}

TEST_CASE("finite differences on a smooth function are tight") {
  auto f = [](TapeT<double>& tape, const std::vector<Tensor64>& xs) {
    return tape.sum(tape.hadamard(xs[0], xs[0]));
  };
  Rng rng(71);
  auto report = finite_diff_check(f, {randu(rng, 3, 4)}, 1e-5);
  CHECK(report.coords_checked == 12);
  CHECK(report.kinks_skipped == 0);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("relu at zero is excluded as a kink") {
  auto f = [](TapeT<double>& tape, const std::vector<Tensor64>& xs) {
    return tape.sum(tape.relu(xs[0]));
  };
  auto report = finite_diff_check(f, {Tensor64(1, 3, {-1.0, 0.0, 1.0})}, 1e-5);
  CHECK(report.kinks_skipped == 1);
  CHECK(report.coords_checked == 2);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("epsilon outside the supported band is rejected") {
  auto f = [](TapeT<double>& tape, const std::vector<Tensor64>& xs) {
    return tape.sum(xs[0]);
  };
  CHECK_THROWS_AS(finite_diff_check(f, {Tensor64(1, 1, {1.0})}, 1e-8), InputError);
  CHECK_THROWS_AS(finite_diff_check(f, {Tensor64(1, 1, {1.0})}, 1e-2), InputError);
}

TEST_CASE("every differentiable primitive passes a composed finite-difference check") {
  // One expression touching matmul, transpose, add (both forms), hadamard,
  // sigmoid, tanh, relu, softmax, concat, slice, max, lookup, scale, negate,
  // cross entropy.
  auto f = [](TapeT<double>& tape, const std::vector<Tensor64>& xs) {
    const auto& table = xs[0];  // 4x3
    const auto& w = xs[1];      // 3x3
    const auto& bias = xs[2];   // 3x1
    auto e0 = tape.embedding_lookup(table, 0);
    auto e2 = tape.embedding_lookup(table, 2);
    auto m = tape.concat_columns({e0, e2, tape.negate(e0)});     // 3x3
    auto pre = tape.add(tape.matmul(w, m), bias);                // broadcast add
    auto act = tape.add(tape.sigmoid(pre), tape.tanh(tape.scale(pre, 0.5)));
    auto attn = tape.softmax_rows(tape.matmul(tape.transpose(act), act));
    auto mixed = tape.matmul(act, attn);
    auto sliced = tape.slice_columns(mixed, 1, 2);
    auto rel = tape.relu(tape.hadamard(sliced, sliced));
    auto [mx, arg] = tape.max_over_columns(rel);
    (void)arg;
    return tape.add(tape.cross_entropy_smoothed(mx, 1, 0.2), tape.sum(mixed));
  };
  Rng rng(72);
  auto report = finite_diff_check(
      f, {randu(rng, 4, 3), randu(rng, 3, 3), randu(rng, 3, 1)}, 1e-5);
  CHECK(report.coords_checked > 15);
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("forward replay is bit-identical") {
  Rng rng(73);
  auto a = randu(rng, 4, 4);
  auto b = randu(rng, 4, 4);
  auto run = [&]() {
    Tape64 tape(false);
    return tape.softmax_rows(tape.matmul(tape.sigmoid(a), tape.tanh(b))).data;
  };
  CHECK(run() == run());
}

TEST_CASE("float instantiation works for the training path") {
  Tape32 tape;
  auto x = tape.leaf(Tensor32(2, 2, {1.f, 2.f, 3.f, 4.f}));
  auto loss = tape.sum(tape.hadamard(x, x));
  tape.backward(loss);
  CHECK(tape.grad(x) == std::vector<float>{2.f, 4.f, 6.f, 8.f});
}
