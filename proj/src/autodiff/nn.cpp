// SPDX-License-Identifier: Apache-2.0
#include "cvm/autodiff/nn.hpp"

#include <cmath>

namespace cvm::ad {

Linear Linear::create(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                      bool with_bias) {
  Linear l;
  const double bound = std::sqrt(3.0 / static_cast<double>(in));
  l.weight = ps.uniform(name + ".weight", {in, out}, bound, rng);
  if (with_bias) l.bias = ps.constant(name + ".bias", {out}, 0.0);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x.rank() == 1 ? unsqueeze(x, 0) : x, weight);
  if (bias.defined()) y = add(y, bias);
  return x.rank() == 1 ? reshape(y, {weight.dim(1)}) : y;
}

Conv2d Conv2d::create(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
                      std::int64_t kernel, std::int64_t stride, std::int64_t padding, Rng& rng) {
  Conv2d c;
  const double bound = std::sqrt(3.0 / static_cast<double>(in * kernel * kernel));
  c.weight = ps.uniform(name + ".weight", {out, in, kernel, kernel}, bound, rng);
  c.bias = ps.constant(name + ".bias", {out}, 0.0);
  c.options = {stride, padding};
  return c;
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, std::int64_t dim) {
  LayerNorm n;
  n.gamma = ps.constant(name + ".gamma", {dim}, 1.0);
  n.beta = ps.constant(name + ".beta", {dim}, 0.0);
  return n;
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  return add(mul(layer_normalize(x, -1, eps), gamma), beta);
}

}  // namespace cvm::ad
