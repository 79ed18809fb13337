#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "iln/autodiff.hpp"
#include "iln/ops.hpp"
#include "iln/rng.hpp"

namespace iln::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;

  [[nodiscard]] bool passes(double tol) const { return max_rel_error <= tol; }
};

/// Compares analytic gradients of a random projection sum(c * op(inputs))
/// against central differences. Relative error per entry is
/// |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const std::function<Var<double>(const std::vector<Var<double>>&)>& op,
                                  const std::vector<Tensor<double>>& inputs, Rng& rng, double step = 1e-5,
                                  double floor = 1e-3) {
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(leaf(t));
  const Var<double> out = op(leaves);
  Tensor<double> weights(out.shape());
  for (auto& w : weights.values()) w = rng.uniform(-1.0, 1.0);
  const auto project = [&](const Tensor<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
    return s;
  };
  backward(sum_last(reshape(mul(out, constant(weights)), {out.value().size()})));

  GradCheckReport report;
  std::vector<Var<double>> probe;
  for (const auto& t : inputs) probe.push_back(constant(t));
  NoGradGuard no_grad;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    const Tensor<double> analytic = leaves[j].grad().empty() ? Tensor<double>(inputs[j].shape()) : leaves[j].grad();
    Tensor<double>& x = probe[j].mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + step;
      const double up = project(op(probe).value());
      x[i] = saved - step;
      const double down = project(op(probe).value());
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err > report.max_rel_error) report = {err, j, i, a, numeric};
    }
  }
  return report;
}

}  // namespace iln::ad
