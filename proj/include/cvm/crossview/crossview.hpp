// SPDX-License-Identifier: Apache-2.0
//
// The learned feature pathway of the cross-view module: a residual conv
// encoder s(.) at 1/8 resolution followed by a multi-view window transformer
// m(.) that alternates self- and cross-view attention.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cvm/autodiff/nn.hpp"
#include "cvm/geometry/geometry.hpp"

namespace cvm::cv {

struct SpatialEncoderConfig {
  /// Output channels of each stride-2 residual block; the last entry is the
  /// feature width. Three blocks give the fixed 1/8 resolution.
  std::vector<std::int64_t> block_channels{64, 96, 128};
  std::int64_t downsample_factor = 8;

  std::int64_t out_channels() const { return block_channels.back(); }
  void validate() const;
};

/// Residual block: silu(conv3x3_s1(silu(conv3x3_s2(x))) + conv1x1_s2(x)).
/// Output cell c of every stride-2 convolution is centred on input pixel 2c.
struct ResidualBlock {
  ad::Conv2d conv1, conv2, shortcut;
  ad::Tensor operator()(const ad::Tensor& x) const;
};

class SpatialEncoder {
 public:
  static SpatialEncoder create(ad::ParamStore& ps, const std::string& name, const SpatialEncoderConfig& cfg,
                               Rng& rng);

  /// images [V,3,H,W] -> [V,C,ceil(H/8),ceil(W/8)]. Extents that are not a
  /// multiple of 8 are zero-padded at the bottom/right first. The same weights
  /// encode every view.
  ad::Tensor operator()(const ad::Tensor& images) const;
  const SpatialEncoderConfig& config() const { return cfg_; }

 private:
  SpatialEncoderConfig cfg_;
  std::vector<ResidualBlock> blocks_;
};

struct MvTransformerConfig {
  std::int64_t layers = 6;  // [self, cross] repeated layers/2 times
  std::int64_t window_size = 8;
  std::int64_t heads = 4;
  std::int64_t channels = 128;
  std::int64_t neighbor_limit = 2;
  std::int64_t ffn_expansion = 4;
  std::int64_t adapter_expansion = 2;
  /// Offset the windows by half a window on every second self/cross pair.
  bool shifted_windows = false;

  void validate() const;
};

/// Neighbour views each reference view attends to in cross-attention. With
/// at most neighbor_limit other views, all of them (ascending index); above
/// that, the neighbor_limit nearest by camera centre distance, ties to the
/// lower index. A lone view attends to itself.
std::vector<std::vector<std::int64_t>> select_neighbors(std::int64_t views, std::int64_t limit,
                                                        const std::optional<std::vector<geo::Vec3>>& centers);

/// [C,H,W] -> [(H/w)*(W/w), w*w, C]; extents must be multiples of w.
ad::Tensor window_partition(const ad::Tensor& x, std::int64_t w);
/// Inverse of window_partition for a map of extents h x wd.
ad::Tensor window_unpartition(const ad::Tensor& windows, std::int64_t w, std::int64_t h, std::int64_t wd);

/// Detached softmax maps of every attention layer, [windows, heads, queries, keys]
/// per view.
struct AttentionTrace {
  std::vector<ad::Tensor> maps;
};

class MvTransformer {
 public:
  static MvTransformer create(ad::ParamStore& ps, const std::string& name, const MvTransformerConfig& cfg, Rng& rng);

  /// feats [V,C,H,W] -> cross-view enhanced features of the same shape.
  /// centers are camera centres in a common world frame; required when a view
  /// has more candidate neighbours than neighbor_limit.
  ad::Tensor operator()(const ad::Tensor& feats, const std::optional<std::vector<geo::Vec3>>& centers = {},
                        AttentionTrace* trace = nullptr) const;
  const MvTransformerConfig& config() const { return cfg_; }

 private:
  struct Layer {
    bool cross = false;
    bool output_norm = true;
    ad::Linear q, k, v, proj;
    ad::LayerNorm norm1;
    ad::Linear ffn1, ffn2;  // cross layers only
    ad::LayerNorm norm2;
    ad::Tensor bias_table;  // [(2w-1)^2, heads]
  };

  ad::Tensor attend(const Layer& layer, const ad::Tensor& x, const std::vector<ad::Tensor>& sources, std::int64_t h,
                    std::int64_t w, bool shift, AttentionTrace* trace) const;

  MvTransformerConfig cfg_;
  std::vector<Layer> layers_;
  ad::Linear adapter_gate_, adapter_value_, adapter_out_;
  std::vector<std::int64_t> bias_index_;  // [w^2 * w^2] rows into bias_table
};

}  // namespace cvm::cv
