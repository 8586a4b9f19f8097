// SPDX-License-Identifier: Apache-2.0
//
// Thin parameterised layers over the primitives. Each layer holds handles onto
// leaves owned by a ParamStore, so loading a checkpoint into the store updates
// every layer in place.

#pragma once

#include <string>

#include "cvm/autodiff/ops.hpp"
#include "cvm/autodiff/params.hpp"

namespace cvm::ad {

/// y = x W + b over the last axis; W is [in, out].
struct Linear {
  Tensor weight, bias;

  static Linear create(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                       bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct Conv2d {
  Tensor weight, bias;
  Conv2dOptions options;

  static Conv2d create(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
                       std::int64_t kernel, std::int64_t stride, std::int64_t padding, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, options); }
};

/// Layer normalisation over the last axis with learned gain and shift.
struct LayerNorm {
  Tensor gamma, beta;
  double eps = 1e-5;

  static LayerNorm create(ParamStore& ps, const std::string& name, std::int64_t dim);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace cvm::ad
