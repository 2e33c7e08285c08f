#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "q2p/errors.hpp"
#include "q2p/rng.hpp"

namespace q2p {

// Dense row-major matrix. `node` links the value to the tape that produced
// it; -1 marks a constant that receives no gradient. Scalars are 1x1.
template <class S>
struct TensorT {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<S> data;
  int node = -1;

  TensorT() = default;
  TensorT(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, S(0)) {}
  TensorT(std::size_t r, std::size_t c, std::vector<S> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols)
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  }

  S& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  S at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  S scalar() const {
    if (!is_scalar()) throw ContractError("tensor is not a scalar");
    return data[0];
  }
};

template <class S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  std::vector<S> grad;

  ParameterT() = default;
  ParameterT(std::string n, TensorT<S> v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), S(0)) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

namespace detail {

template <class S>
std::string shape_str(const TensorT<S>& t) {
  return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

// C (m x n) += A (m x k) * B (k x n); a_t / b_t mark operands whose buffers
// hold the transposed layout.
template <class S>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const S* A, bool a_t, const S* B,
              bool b_t, S* C) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const S a = a_t ? A[p * m + i] : A[i * k + p];
      if (a == S(0)) continue;
      if (!b_t) {
        const S* brow = B + p * n;
        S* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      } else {
        S* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * B[j * k + p];
      }
    }
  }
}

template <class S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

// Records primitive applications for reverse-mode differentiation. A tape
// constructed with recording=false evaluates the same forward math with no
// bookkeeping, which is how evaluation paths run. Tensors passed to a
// recording tape must have been produced by that tape or carry node == -1.
template <class S>
class TapeT {
 public:
  using Tensor = TensorT<S>;

  explicit TapeT(bool recording = true) : recording_(recording) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  bool recording() const { return recording_; }

  // Registers a differentiable input. The returned tensor's gradient is
  // readable via grad() after backward.
  Tensor leaf(Tensor value) {
    value.node = push(value.size(), {});
    return value;
  }

  // Leaf tied to a Parameter: backward() adds d loss / d value into p.grad.
  Tensor watch(ParameterT<S>& p) {
    Tensor t = leaf(p.value);
    if (recording_) watched_.emplace_back(t.node, &p);
    return t;
  }

  // Reverse traversal in exact reverse application order, seeding d loss /
  // d loss = 1. Fan-out accumulates additively. One call per tape.
  void backward(const Tensor& loss) {
    if (!recording_) throw ContractError("backward on a non-recording tape");
    if (backward_done_) throw ContractError("backward already ran on this tape");
    if (!loss.is_scalar())
      throw ContractError("backward requires a scalar loss, got " + detail::shape_str(loss));
    if (loss.node < 0) throw ContractError("loss was not recorded on this tape");
    backward_done_ = true;
    grads_[loss.node][0] = S(1);
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      if (nodes_[id].back) nodes_[id].back();
    }
    for (auto& [node, param] : watched_) {
      const auto& g = grads_[node];
      for (std::size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
    }
  }

  const std::vector<S>& grad(const Tensor& t) const {
    if (!backward_done_) throw ContractError("grad() before backward()");
    check_node(t);
    if (t.node < 0) throw ContractError("tensor is a constant; no gradient recorded");
    return grads_[t.node];
  }

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows)
      throw ShapeError("matmul: " + detail::shape_str(a) + " x " + detail::shape_str(b));
    check_node(a);
    check_node(b);
    Tensor out(a.rows, b.cols);
    detail::gemm_acc(a.rows, b.cols, a.cols, a.data.data(), false, b.data.data(), false,
                     out.data.data());
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, bn = b.node, av = a.data, bv = b.data,
                                   m = a.rows, k = a.cols, n = b.cols, on = next_id()]() {
        const auto& g = grads_[on];
        if (an >= 0)  // dA += G * B^T
          detail::gemm_acc(m, k, n, g.data(), false, bv.data(), true, grads_[an].data());
        if (bn >= 0)  // dB += A^T * G
          detail::gemm_acc(k, n, m, av.data(), true, g.data(), false, grads_[bn].data());
      });
    }
    return out;
  }

  Tensor transpose(const Tensor& a) {
    check_node(a);
    Tensor out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, r = a.rows, c = a.cols, on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      });
    }
    return out;
  }

  // Elementwise on equal shapes; a column vector b (n x 1) broadcasts over
  // the columns of a (n x m).
  Tensor add(const Tensor& a, const Tensor& b) {
    check_node(a);
    check_node(b);
    const bool broadcast = b.cols == 1 && a.rows == b.rows && a.cols != b.cols;
    if (!broadcast && (a.rows != b.rows || a.cols != b.cols))
      throw ShapeError("add: " + detail::shape_str(a) + " vs " + detail::shape_str(b));
    Tensor out = a;
    out.node = -1;
    if (broadcast) {
      for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out.at(i, j) += b.data[i];
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    }
    if (recording_) {
      out.node = push(out.size(),
                      [this, an = a.node, bn = b.node, broadcast, r = a.rows, c = a.cols,
                       on = next_id()]() {
                        const auto& g = grads_[on];
                        if (an >= 0) {
                          auto& ga = grads_[an];
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        }
                        if (bn >= 0) {
                          auto& gb = grads_[bn];
                          if (broadcast) {
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) gb[i] += g[i * c + j];
                          } else {
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                          }
                        }
                      });
    }
    return out;
  }

  Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (a.rows != b.rows || a.cols != b.cols)
      throw ShapeError("hadamard: " + detail::shape_str(a) + " vs " + detail::shape_str(b));
    check_node(a);
    check_node(b);
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    if (recording_) {
      out.node =
          push(out.size(), [this, an = a.node, bn = b.node, av = a.data, bv = b.data,
                            on = next_id()]() {
            const auto& g = grads_[on];
            if (an >= 0) {
              auto& ga = grads_[an];
              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (bn >= 0) {
              auto& gb = grads_[bn];
              for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
          });
    }
    return out;
  }

  Tensor sigmoid(const Tensor& a) {
    check_node(a);
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = detail::stable_sigmoid(a.data[i]);
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, y = out.data, on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
      });
    }
    return out;
  }

  Tensor tanh(const Tensor& a) {
    check_node(a);
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::tanh(a.data[i]);
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, y = out.data, on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (S(1) - y[i] * y[i]);
      });
    }
    return out;
  }

  // Gradient at exactly 0 is taken as 0 (the checker treats that point as a
  // kink and skips it).
  Tensor relu(const Tensor& a) {
    check_node(a);
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] > S(0) ? a.data[i] : S(0);
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, y = out.data, on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < g.size(); ++i)
          if (y[i] > S(0)) ga[i] += g[i];
      });
    }
    return out;
  }

  Tensor softmax_rows(const Tensor& a) {
    check_node(a);
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
      S mx = a.at(i, 0);
      for (std::size_t j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
      S denom = S(0);
      for (std::size_t j = 0; j < a.cols; ++j) {
        out.at(i, j) = std::exp(a.at(i, j) - mx);
        denom += out.at(i, j);
      }
      for (std::size_t j = 0; j < a.cols; ++j) out.at(i, j) /= denom;
    }
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, y = out.data, r = a.rows, c = a.cols,
                                   on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < r; ++i) {
          S dot = S(0);
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
      });
    }
    return out;
  }

  Tensor concat_columns(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_columns needs at least one input");
    std::size_t rows = parts[0].rows;
    std::size_t cols = 0;
    for (const Tensor& p : parts) {
      check_node(p);
      if (p.rows != rows)
        throw ShapeError("concat_columns: row mismatch " + detail::shape_str(parts[0]) + " vs " +
                         detail::shape_str(p));
      cols += p.cols;
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    std::vector<int> in_nodes;
    std::vector<std::size_t> in_cols;
    for (const Tensor& p : parts) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < p.cols; ++j) out.at(i, offset + j) = p.at(i, j);
      in_nodes.push_back(p.node);
      in_cols.push_back(p.cols);
      offset += p.cols;
    }
    if (recording_) {
      out.node = push(out.size(),
                      [this, in_nodes, in_cols, rows, cols, on = next_id()]() {
                        const auto& g = grads_[on];
                        std::size_t off = 0;
                        for (std::size_t p = 0; p < in_nodes.size(); ++p) {
                          if (in_nodes[p] >= 0) {
                            auto& ga = grads_[in_nodes[p]];
                            for (std::size_t i = 0; i < rows; ++i)
                              for (std::size_t j = 0; j < in_cols[p]; ++j)
                                ga[i * in_cols[p] + j] += g[i * cols + off + j];
                          }
                          off += in_cols[p];
                        }
                      });
    }
    return out;
  }

  Tensor slice_columns(const Tensor& a, std::size_t start, std::size_t count) {
    check_node(a);
    if (count < 1 || start + count > a.cols)
      throw ShapeError("slice_columns [" + std::to_string(start) + ", " +
                       std::to_string(start + count) + ") of " + detail::shape_str(a));
    Tensor out(a.rows, count);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < count; ++j) out.at(i, j) = a.at(i, start + j);
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, start, count, r = a.rows, c = a.cols,
                                   on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < count; ++j) ga[i * c + start + j] += g[i * count + j];
      });
    }
    return out;
  }

  // Per-row maximum (n x 1) plus argmax indices; ties take the lowest column
  // so gradient routing is deterministic. The whole incoming gradient of a
  // row flows to its argmax entry.
  std::pair<Tensor, std::vector<std::size_t>> max_over_columns(const Tensor& a) {
    check_node(a);
    if (a.cols < 1) throw ShapeError("max_over_columns on " + detail::shape_str(a));
    Tensor out(a.rows, 1);
    std::vector<std::size_t> arg(a.rows, 0);
    for (std::size_t i = 0; i < a.rows; ++i) {
      S best = a.at(i, 0);
      for (std::size_t j = 1; j < a.cols; ++j) {
        if (a.at(i, j) > best) {
          best = a.at(i, j);
          arg[i] = j;
        }
      }
      out.data[i] = best;
    }
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, arg, c = a.cols, on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i * c + arg[i]] += g[i];
      });
    }
    return {out, arg};
  }

  // Row `row` of the table as a column vector. Gradient accumulates into
  // just that row of the table's buffer.
  Tensor embedding_lookup(const Tensor& table, std::size_t row) {
    check_node(table);
    if (row >= table.rows)
      throw InputError("embedding row " + std::to_string(row) + " out of range for " +
                       detail::shape_str(table));
    Tensor out(table.cols, 1);
    for (std::size_t j = 0; j < table.cols; ++j) out.data[j] = table.at(row, j);
    if (recording_) {
      out.node = push(out.size(),
                      [this, tn = table.node, row, c = table.cols, on = next_id()]() {
                        if (tn < 0) return;
                        const auto& g = grads_[on];
                        auto& gt = grads_[tn];
                        for (std::size_t j = 0; j < c; ++j) gt[row * c + j] += g[j];
                      });
    }
    return out;
  }

  Tensor scale(const Tensor& a, S factor) {
    check_node(a);
    Tensor out = a;
    out.node = -1;
    for (S& v : out.data) v *= factor;
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, factor, on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      });
    }
    return out;
  }

  Tensor negate(const Tensor& a) { return scale(a, S(-1)); }

  Tensor sum(const Tensor& a) {
    check_node(a);
    Tensor out(1, 1);
    for (S v : a.data) out.data[0] += v;
    if (recording_) {
      out.node = push(1, [this, an = a.node, n = a.size(), on = next_id()]() {
        if (an < 0) return;
        const S g = grads_[on][0];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < n; ++i) ga[i] += g;
      });
    }
    return out;
  }

  // Inverted dropout: kept entries scale by 1/(1-rate) so evaluation needs
  // no rescaling. rate 0 is exactly the identity and consumes no randomness.
  Tensor dropout(const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
      throw InputError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
    if (rate == 0.0) return a;
    check_node(a);
    const S keep_scale = S(1.0 / (1.0 - rate));
    std::vector<S> mask(a.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = rng.bernoulli(rate) ? S(0) : keep_scale;
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] * mask[i];
    if (recording_) {
      out.node = push(out.size(), [this, an = a.node, mask, on = next_id()]() {
        if (an < 0) return;
        const auto& g = grads_[on];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
      });
    }
    return out;
  }

  // Fused softmax cross-entropy of a logit column against the smoothed
  // target (1-eps on `target`, eps/n elsewhere). Gradient is p - t, the
  // closed form for softmax composed with this loss.
  Tensor cross_entropy_smoothed(const Tensor& logits, std::size_t target, double smoothing) {
    check_node(logits);
    if (logits.cols != 1 || logits.rows < 1)
      throw ShapeError("cross_entropy_smoothed expects a logit column, got " +
                       detail::shape_str(logits));
    if (target >= logits.rows)
      throw InputError("target index " + std::to_string(target) + " out of range");
    if (smoothing < 0.0 || smoothing >= 1.0)
      throw InputError("label smoothing " + std::to_string(smoothing) + " outside [0, 1)");
    const std::size_t n = logits.rows;
    for (S v : logits.data)
      if (!std::isfinite(v)) throw NumericError("non-finite logit in cross entropy");

    S mx = logits.data[0];
    for (S v : logits.data) mx = std::max(mx, v);
    S denom = S(0);
    std::vector<S> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = std::exp(logits.data[i] - mx);
      denom += p[i];
    }
    const S lse = mx + std::log(denom);
    for (std::size_t i = 0; i < n; ++i) p[i] /= denom;

    const S eps_term = S(smoothing) / S(n);
    S dot = S(0);
    for (std::size_t i = 0; i < n; ++i) {
      S t = eps_term + (i == target ? S(1.0 - smoothing) : S(0));
      dot += t * logits.data[i];
    }
    Tensor out(1, 1);
    out.data[0] = lse - dot;
    if (recording_) {
      out.node = push(1, [this, an = logits.node, p = std::move(p), target, eps_term,
                          smoothing, on = next_id()]() {
        if (an < 0) return;
        const S g = grads_[on][0];
        auto& ga = grads_[an];
        for (std::size_t i = 0; i < p.size(); ++i) {
          S t = eps_term + (i == target ? S(1.0 - smoothing) : S(0));
          ga[i] += g * (p[i] - t);
        }
      });
    }
    return out;
  }

 private:
  struct Node {
    std::function<void()> back;
  };

  // Node id the next push() will assign; used inside forward code to let the
  // backward lambda name its own output slot.
  int next_id() const { return static_cast<int>(nodes_.size()); }

  int push(std::size_t grad_size, std::function<void()> back) {
    if (!recording_) return -1;
    nodes_.push_back({std::move(back)});
    grads_.emplace_back(grad_size, S(0));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_node(const Tensor& t) const {
    if (t.node >= static_cast<int>(nodes_.size()))
      throw ContractError("tensor does not belong to this tape");
  }

  bool recording_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::vector<std::vector<S>> grads_;
  std::vector<std::pair<int, ParameterT<S>*>> watched_;
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;
using Tape32 = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace q2p
