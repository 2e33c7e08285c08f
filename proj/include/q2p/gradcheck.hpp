#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "q2p/errors.hpp"
#include "q2p/tensor.hpp"

namespace q2p {

// A scalar-valued function under test. The tape argument may or may not be
// recording; inputs arrive already registered as leaves when it is.
using ScalarFn =
    std::function<TensorT<double>(TapeT<double>&, const std::vector<TensorT<double>>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_skipped = 0;
};

// Compares the tape gradient of f against central differences per input
// coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. Coordinates where the two one-sided slopes disagree are
// treated as kinks (relu zeros, max ties) and excluded from the comparison.
inline GradCheckReport finite_diff_check(const ScalarFn& f, std::vector<TensorT<double>> inputs,
                                         double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-3)
    throw InputError("finite difference epsilon " + std::to_string(epsilon) +
                     " outside [1e-7, 1e-3]");

  const auto eval_value = [&](const std::vector<TensorT<double>>& xs) {
    TapeT<double> tape(false);
    double v = f(tape, xs).scalar();
    if (!std::isfinite(v)) throw NumericError("non-finite value during finite differences");
    return v;
  };

  std::vector<std::vector<double>> analytic;
  {
    TapeT<double> tape(true);
    std::vector<TensorT<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
    TensorT<double> loss = f(tape, leaves);
    if (!std::isfinite(loss.scalar()))
      throw NumericError("non-finite loss in gradient check");
    tape.backward(loss);
    for (const auto& leaf : leaves) analytic.push_back(tape.grad(leaf));
  }

  const double f0 = eval_value(inputs);
  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double saved = inputs[t].data[i];
      inputs[t].data[i] = saved + epsilon;
      const double fp = eval_value(inputs);
      inputs[t].data[i] = saved - epsilon;
      const double fm = eval_value(inputs);
      inputs[t].data[i] = saved;

      const double slope_up = (fp - f0) / epsilon;
      const double slope_down = (f0 - fm) / epsilon;
      if (std::abs(slope_up - slope_down) >
          1e-2 * std::max({1.0, std::abs(slope_up), std::abs(slope_down)})) {
        ++report.kinks_skipped;
        continue;
      }

      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = analytic[t][i];
      if (!std::isfinite(a) || !std::isfinite(numeric))
        throw NumericError("non-finite gradient during finite differences");
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace q2p
