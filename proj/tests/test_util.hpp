#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dforge/autograd.hpp"

namespace dforge::testutil {

template <typename T>
Tensor<T> random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

inline Var<double> random_param(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return Var<double>::parameter(random_tensor<double>(std::move(shape), seed, lo, hi));
}

// Gradient norms below this count as exactly zero (e.g. attention key biases).
inline constexpr double kZeroGradient = 1e-9;

struct GradCheckResult {
  double rel_error = 0;  // max over checked tensors of |a - n| / max(|a|, |n|)
  double analytic_norm = 0;
  size_t checked = 0;
};

// Central finite differences against reverse mode. `loss` must rebuild the
// graph from the current values of `wrt`. At most `max_per_tensor` entries
// of each tensor are probed (evenly strided).
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss,
                                  std::vector<Var<double>> wrt, double h = 1e-3,
                                  size_t max_per_tensor = 0) {
  for (auto& v : wrt) v.zero_grad();
  loss().backward();
  GradCheckResult res;
  for (auto& v : wrt) {
    const auto n = static_cast<size_t>(v.numel());
    const size_t stride =
        max_per_tensor == 0 || n <= max_per_tensor ? 1 : (n + max_per_tensor - 1) / max_per_tensor;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (size_t i = 0; i < n; i += stride) {
      const double analytic = v.has_grad() ? v.grad()[static_cast<int64_t>(i)] : 0.0;
      double& x = v.mutable_value()[static_cast<int64_t>(i)];
      const double orig = x;
      double up, down;
      {
        NoGradGuard guard;
        x = orig + h;
        up = loss().item();
        x = orig - h;
        down = loss().item();
      }
      x = orig;
      const double numeric = (up - down) / (2 * h);
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      ++res.checked;
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    if (denom > kZeroGradient) res.rel_error = std::max(res.rel_error, std::sqrt(diff2) / denom);
    res.analytic_norm += std::sqrt(a2);
  }
  return res;
}

// Scalar probe of a tensor-valued output: sum(out * fixed random weights).
inline Var<double> probe(const Var<double>& out, uint64_t seed = 99) {
  return ag::sum(out * Var<double>::constant(random_tensor<double>(out.shape(), seed)));
}

}  // namespace dforge::testutil
