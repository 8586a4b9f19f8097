// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. All operate on row-major double tensors and
// throw DimensionError naming the offending shapes on mismatch.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cvm/autodiff/tensor.hpp"

namespace cvm::ad {

// ---- elementwise, numpy-style broadcasting ---------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// silu(gate) * value, the gating nonlinearity of a SwiGLU block.
Tensor silu_gate(const Tensor& gate, const Tensor& value);

// ---- reductions --------------------------------------------------------------
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::int64_t axis, bool keepdim = false);

// ---- layout -------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order);
Tensor transpose(const Tensor& x, std::int64_t a, std::int64_t b);
Tensor narrow(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
/// Insert a new axis of extent 1.
Tensor unsqueeze(const Tensor& x, std::int64_t axis);
/// Rows of x selected along axis 0 (repeats allowed); gradient scatter-adds.
Tensor index_select(const Tensor& x, const std::vector<std::int64_t>& rows);
/// Zero-pad the last two axes.
Tensor pad2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right);

// ---- linear algebra / convolution ----------------------------------------------
/// Batched matrix product [..,M,K] x [..,K,N]; batch extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};
/// Cross-correlation x[B,C,H,W] * w[O,C,kh,kw] (+ bias[O]) -> [B,O,H',W'].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {}, Conv2dOptions opt = {});

/// Depth-to-space rearrangement [B,C*r*r,H,W] -> [B,C,H*r,W*r].
Tensor pixel_shuffle(const Tensor& x, std::int64_t factor);

/// Learned sub-pixel upsampling: a 3x3 convolution to C'*factor^2 channels
/// followed by pixel_shuffle. weight is [C'*factor^2, C, 3, 3].
Tensor upsample_learned(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::int64_t factor = 4);

/// Bilinear resize of the last two axes (half-pixel centres, edge clamped).
Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

// ---- sampling -------------------------------------------------------------------
struct SampleResult {
  Tensor values;                   // [C,H',W']
  std::vector<std::uint8_t> valid;  // [H'*W'], 1 when the sample lies inside the map
};
/// Bilinear interpolation of feat[C,H,W] at absolute pixel coordinates
/// grid[H',W',2] = (x, y). Pixel (col,row) has its centre at (col,row).
/// Out-of-bounds neighbours read as zero. Differentiable w.r.t. feat and grid.
SampleResult bilinear_sample(const Tensor& feat, const Tensor& grid);

// ---- normalisation ---------------------------------------------------------------
Tensor softmax(const Tensor& x, std::int64_t axis);
Tensor log_softmax(const Tensor& x, std::int64_t axis);
/// (x - mean) / sqrt(var + eps) along one axis, no affine part.
Tensor layer_normalize(const Tensor& x, std::int64_t axis, double eps = 1e-5);
/// x / sqrt(|x|^2 + eps) along one axis.
Tensor l2_normalize(const Tensor& x, std::int64_t axis, double eps = 1e-12);

// ---- losses ------------------------------------------------------------------------
/// Mean cross-entropy of logits[K,H,W] (or [K,N]) against integer labels,
/// skipping ignore_label. Returns a scalar; zero when no pixel is labelled.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels,
                     std::int32_t ignore_label);
/// Mean binary cross-entropy with logits over entries where mask != 0.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const std::uint8_t> mask);
/// Mean |pred - target| over entries where mask != 0.
Tensor masked_l1(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask);

}  // namespace cvm::ad
