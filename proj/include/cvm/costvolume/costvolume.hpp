// SPDX-License-Identifier: Apache-2.0
//
// Differentiable plane-sweep cost volume over cross-view features:
//   C_i[d,p] = 1/(V-1) * sum_{j != i} <F_i[p], warp_{j->i}^{(d)}(F_j)[p]> / sqrt(K)
// Samples that land outside view j, or behind it, contribute zero.

#pragma once

#include <filesystem>
#include <vector>

#include "cvm/autodiff/tensor.hpp"
#include "cvm/geometry/geometry.hpp"

namespace cvm::costvol {

struct WarpedFeatureStack {
  ad::Tensor values;               // [L,C,H,W], zero where mask is 0
  std::vector<std::uint8_t> mask;  // [L*H*W]
};

/// Warp neighbour features feat_j [C,H,W] into the reference grid for every
/// hypothesis. Intrinsics must already be at feature resolution.
WarpedFeatureStack warp_features(const ad::Tensor& feat_j, const geo::CameraIntrinsics& intr_i,
                                 const geo::CameraIntrinsics& intr_j, const geo::RigidPose& rel_j_from_i,
                                 const geo::DepthHypothesisSet& hyp);

enum class DepthReduction {
  PerDepth,   // one channel per hypothesis
  Collapsed,  // summed over hypotheses, one channel
};

struct CostVolumeOptions {
  DepthReduction reduction = DepthReduction::PerDepth;
  /// Full-resolution intrinsics are divided by this factor.
  std::int64_t downsample_factor = 8;
};

struct CostVolume {
  ad::Tensor values;            // [V,L,H,W] (or [V,1,H,W] collapsed)
  std::vector<double> validity;  // [V*H*W], fraction of in-bounds (neighbour, depth) samples
};

/// feats [V,C,H,W] at 1/downsample_factor resolution; cameras at full resolution.
CostVolume build_cost_volume(const ad::Tensor& feats, const std::vector<geo::Camera>& cameras,
                             const geo::DepthHypothesisSet& hyp, const CostVolumeOptions& opt = {});

/// Correlation of ref [C,H,W] with src [C,Hs,Ws] sampled at grid [D*H*W*2]:
/// out[d,p] = scale * <ref[:,p], bilinear(src, grid[d,p])>, zeroed where the
/// sample is invalid. Differentiable w.r.t. ref and src.
ad::Tensor plane_sweep_correlation(const ad::Tensor& ref, const ad::Tensor& src, const std::vector<double>& grid,
                                   const std::vector<std::uint8_t>& valid, std::int64_t depths, double scale);

/// Raw dump: int64 header {V, L, H, W} then row-major doubles, little-endian.
void write_cost_volume_dump(const std::filesystem::path& path, const CostVolume& cv);

}  // namespace cvm::costvol
