// SPDX-License-Identifier: Apache-2.0
#include "cvm/costvolume/costvolume.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cvm/autodiff/ops.hpp"
#include "cvm/core/error.hpp"
#include "cvm/kernels/kernels.hpp"

namespace cvm::costvol {

using ad::Tensor;

namespace {

void check_feature_scale(const geo::CameraIntrinsics& k, std::int64_t h, std::int64_t w, const char* which) {
  if (k.cx > static_cast<double>(w) || k.cy > static_cast<double>(h)) {
    std::ostringstream os;
    os << "intrinsics of view " << which << " look unscaled: principal point (" << k.cx << ", " << k.cy
       << ") lies outside the " << w << "x" << h << " feature grid";
    throw ContractError(os.str());
  }
}

}  // namespace

Tensor plane_sweep_correlation(const Tensor& ref, const Tensor& src, const std::vector<double>& grid,
                               const std::vector<std::uint8_t>& valid, std::int64_t depths, double scale) {
  if (ref.rank() != 3 || src.rank() != 3 || ref.dim(0) != src.dim(0))
    throw DimensionError("plane_sweep_correlation: " + ad::shape_str(ref.shape()) + " vs " +
                         ad::shape_str(src.shape()));
  const std::int64_t c = ref.dim(0), h = ref.dim(1), w = ref.dim(2), p = h * w;
  if (static_cast<std::int64_t>(grid.size()) != 2 * depths * p || static_cast<std::int64_t>(valid.size()) != depths * p)
    throw DimensionError("plane_sweep_correlation: grid does not cover " + std::to_string(depths) + " x " +
                         std::to_string(p) + " samples");
  std::vector<double> out(static_cast<std::size_t>(depths * p));
  kernels::plane_sweep_correlation(c, p, depths, ref.data().data(), src.dim(1), src.dim(2), src.data().data(),
                                   grid.data(), scale, out.data(), nullptr);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!valid[i]) out[i] = 0.0;
  const std::int64_t sh = src.dim(1), sw = src.dim(2);
  return ad::make_result({depths, h, w}, std::move(out), {ref, src}, "plane_sweep_correlation",
                         [=](ad::Node& o) {
                           std::vector<double> g(o.grad);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (!valid[i]) g[i] = 0.0;
                           ad::Node& r = *o.parents[0];
                           ad::Node& s = *o.parents[1];
                           kernels::plane_sweep_correlation_backward(
                               c, p, depths, r.value.data(), sh, sw, s.value.data(), grid.data(), scale, g.data(),
                               r.requires_grad ? r.grad_buffer().data() : nullptr,
                               s.requires_grad ? s.grad_buffer().data() : nullptr);
                         });
}

WarpedFeatureStack warp_features(const Tensor& feat_j, const geo::CameraIntrinsics& intr_i,
                                 const geo::CameraIntrinsics& intr_j, const geo::RigidPose& rel_j_from_i,
                                 const geo::DepthHypothesisSet& hyp) {
  if (feat_j.rank() != 3) throw DimensionError("warp_features expects [C,H,W], got " + ad::shape_str(feat_j.shape()));
  if (hyp.size() == 0) throw ContractError("warp_features: empty hypothesis set");
  const std::int64_t c = feat_j.dim(0), h = feat_j.dim(1), w = feat_j.dim(2);
  const auto l = static_cast<std::int64_t>(hyp.size());
  check_feature_scale(intr_i, h, w, "i");
  check_feature_scale(intr_j, h, w, "j");
  const geo::WarpGrid g = geo::warp_grid_stack(intr_i, intr_j, rel_j_from_i, hyp, h, w);
  auto sample = ad::bilinear_sample(feat_j, Tensor::from({l * h, w, 2}, g.coords));
  std::vector<double> mask(g.valid.begin(), g.valid.end());
  Tensor values = ad::mul(ad::reshape(sample.values, {c, l, h, w}), Tensor::from({1, l, h, w}, std::move(mask)));
  return {ad::permute(values, {1, 0, 2, 3}), g.valid};
}

CostVolume build_cost_volume(const Tensor& feats, const std::vector<geo::Camera>& cameras,
                             const geo::DepthHypothesisSet& hyp, const CostVolumeOptions& opt) {
  if (feats.rank() != 4) throw DimensionError("cost volume expects [V,C,H,W], got " + ad::shape_str(feats.shape()));
  const std::int64_t v = feats.dim(0), c = feats.dim(1), h = feats.dim(2), w = feats.dim(3), p = h * w;
  const auto l = static_cast<std::int64_t>(hyp.size());
  if (v < 2) throw ContractError("cost volume needs at least two views (duplicate a single view upstream)");
  if (c <= 0) throw DimensionError("cost volume: features have no channels");
  if (static_cast<std::int64_t>(cameras.size()) != v)
    throw ContractError("cost volume: " + std::to_string(cameras.size()) + " cameras for " + std::to_string(v) +
                        " views");
  if (l == 0) throw ContractError("cost volume: empty hypothesis set");

  std::vector<geo::CameraIntrinsics> intr;
  for (const auto& cam : cameras) {
    intr.push_back(cam.intrinsics.downscaled(opt.downsample_factor));
    check_feature_scale(intr.back(), h, w, "k");
  }

  const double scale = 1.0 / (static_cast<double>(v - 1) * std::sqrt(static_cast<double>(c)));
  CostVolume cv;
  cv.validity.assign(static_cast<std::size_t>(v * p), 0.0);
  std::vector<Tensor> per_view;
  for (std::int64_t i = 0; i < v; ++i) {
    const Tensor fi = ad::reshape(ad::narrow(feats, 0, i, 1), {c, h, w});
    Tensor acc;
    // Fixed order: ascending neighbour index, each neighbour covering all depths.
    for (std::int64_t j = 0; j < v; ++j) {
      if (j == i) continue;
      const auto rel = geo::relative_pose(cameras[i].pose, cameras[j].pose);
      const geo::WarpGrid g = geo::warp_grid_stack(intr[i], intr[j], rel, hyp, h, w);
      const Tensor fj = ad::reshape(ad::narrow(feats, 0, j, 1), {c, h, w});
      Tensor corr = plane_sweep_correlation(fi, fj, g.coords, g.valid, l, scale);
      acc = acc.defined() ? ad::add(acc, corr) : corr;
      for (std::int64_t d = 0; d < l; ++d)
        for (std::int64_t q = 0; q < p; ++q) cv.validity[i * p + q] += g.valid[d * p + q];
    }
    if (opt.reduction == DepthReduction::Collapsed) acc = ad::sum(acc, 0, true);
    per_view.push_back(ad::unsqueeze(acc, 0));
  }
  const double samples = static_cast<double>((v - 1) * l);
  for (auto& x : cv.validity) x /= samples;
  cv.values = ad::concat(per_view, 0);
  return cv;
}

void write_cost_volume_dump(const std::filesystem::path& path, const CostVolume& cv) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write cost volume dump: " + path.string());
  for (auto d : cv.values.shape()) os.write(reinterpret_cast<const char*>(&d), sizeof(d));
  const auto data = cv.values.data();
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!os) throw IoError("failed writing cost volume dump: " + path.string());
}

}  // namespace cvm::costvol
