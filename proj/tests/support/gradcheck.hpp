// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for gradient tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cvm/autodiff/ops.hpp"
#include "cvm/core/rng.hpp"

namespace cvm::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<input>[<index>]: analytic vs numeric"
};

// Relative error with a floor on the denominator. Perturbing a double by 1e-5
// leaves a cancellation noise of roughly eps*|f|/h ~ 1e-11 in the numeric
// derivative; the 1e-6 floor keeps derivatives far below that noise level
// from being judged purely on rounding.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Compare reverse-mode gradients of scalar f(inputs) against central
/// differences with step h for every element of every input (or a random
/// subset of at most max_per_input elements). floor is the smallest
/// denominator of the relative error.
inline GradCheckResult grad_check(const std::function<ad::Tensor(const std::vector<ad::Tensor>&)>& f,
                                  std::vector<ad::Tensor> inputs, double h = 1e-5,
                                  std::size_t max_per_input = 0, std::uint64_t seed = 0, double floor = 1e-6) {
  for (auto& t : inputs) t.set_requires_grad(true).zero_grad();
  ad::Tensor out = f(inputs);
  ad::backward(out);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad())
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    else
      analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
  }

  GradCheckResult res;
  Rng rng(seed);
  ad::NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    std::vector<std::size_t> idx(data.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    if (max_per_input && idx.size() > max_per_input) {
      for (std::size_t k = 0; k < max_per_input; ++k) std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
      idx.resize(max_per_input);
    }
    for (std::size_t k : idx) {
      const double orig = data[k];
      data[k] = orig + h;
      const double fp = f(inputs).item();
      data[k] = orig - h;
      const double fm = f(inputs).item();
      data[k] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double err = relative_error(analytic[i][k], numeric, floor);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = "input" + std::to_string(i) + "[" + std::to_string(k) + "]: " + std::to_string(analytic[i][k]) +
                    " vs " + std::to_string(numeric);
      }
    }
  }
  return res;
}

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(ad::numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::from(std::move(shape), std::move(v));
}

}  // namespace cvm::testing
