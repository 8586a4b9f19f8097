// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cost_oracle.hpp"
#include "cvm/autodiff/ops.hpp"
#include "cvm/core/error.hpp"
#include "cvm/costvolume/costvolume.hpp"
#include "gradcheck.hpp"
#include "random_geometry.hpp"

using namespace cvm;
using namespace cvm::costvol;
using ad::Tensor;
using cvm::testing::random_tensor;

namespace {

std::vector<geo::Camera> random_rig(Rng& rng, std::int64_t views, std::int64_t size) {
  std::vector<geo::Camera> cams;
  const double f = rng.uniform(0.8, 1.2) * static_cast<double>(size);
  for (std::int64_t v = 0; v < views; ++v) {
    geo::Camera c;
    c.intrinsics = {f, f, (size - 1) / 2.0 + rng.uniform(-2, 2), (size - 1) / 2.0 + rng.uniform(-2, 2), size, size};
    c.pose = v == 0 ? geo::RigidPose::identity() : cvm::testing::random_pose(rng, 0.1, 0.3);
    cams.push_back(c);
  }
  return cams;
}

std::vector<geo::Camera> downscale(std::vector<geo::Camera> cams, std::int64_t f) {
  for (auto& c : cams) c.intrinsics = c.intrinsics.downscaled(f);
  return cams;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(WarpFeatures, IdentityWarpReproducesFeatures) {
  Rng rng(1);
  auto f = random_tensor({4, 8, 8}, rng);
  geo::CameraIntrinsics k{10, 10, 3.5, 3.5, 8, 8};
  auto hyp = geo::make_depth_hypotheses(5, 0.5, 4);
  auto s = warp_features(f, k, k, geo::RigidPose::identity(), hyp);
  ASSERT_EQ(s.values.shape(), (ad::Shape{5, 4, 8, 8}));
  for (std::int64_t d = 0; d < 5; ++d)
    EXPECT_EQ(max_abs_diff(ad::reshape(ad::narrow(s.values, 0, d, 1), {4, 8, 8}).data(), f.data()), 0.0);
  for (auto m : s.mask) EXPECT_EQ(m, 1);
}

TEST(WarpFeatures, RectifiedShiftMatchesDisparity) {
  Rng rng(2);
  auto f = random_tensor({2, 6, 24}, rng);
  geo::CameraIntrinsics k{100, 100, 12, 3, 24, 6};
  geo::RigidPose rel;
  rel.translation = geo::Vec3(0.2, 0, 0);  // view j samples 10 px to the right at d = 2
  geo::DepthHypothesisSet hyp{{2.0, 2.0 * 10.0 / 7.5}, 2.0, 2.0 * 10.0 / 7.5};  // shifts 10 and 7.5 px
  auto s = warp_features(f, k, k, rel, hyp);
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t y = 0; y < 6; ++y)
      for (std::int64_t x = 0; x + 11 < 24; ++x) {
        EXPECT_NEAR(s.values.at({0, c, y, x}), f.at({c, y, x + 10}), 1e-12);
        const double interp = 0.5 * f.at({c, y, x + 7}) + 0.5 * f.at({c, y, x + 8});
        EXPECT_NEAR(s.values.at({1, c, y, x}), interp, 1e-12);
      }
  EXPECT_EQ(s.mask[23], 0);
  EXPECT_EQ(s.values.at({0, 0, 0, 23}), 0.0);
}

TEST(WarpFeatures, MatchesBruteForceLoop) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    auto cams = downscale(random_rig(rng, 2, 64), 8);
    auto f = random_tensor({3, 8, 8}, rng);
    auto hyp = geo::make_depth_hypotheses(4, 1.0, 6.0);
    auto rel = geo::relative_pose(cams[0].pose, cams[1].pose);
    auto s = warp_features(f, cams[0].intrinsics, cams[1].intrinsics, rel, hyp);
    for (std::int64_t d = 0; d < 4; ++d)
      for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x) {
          Eigen::Vector2d q;
          const bool front = cvm::testing::oracle_project(cams[0], cams[1], x, y, hyp.depths[d], q);
          const bool in = front && q.x() >= 0 && q.y() >= 0 && q.x() <= 7 && q.y() <= 7;
          EXPECT_EQ(s.mask[(d * 8 + y) * 8 + x], in ? 1 : 0);
          for (std::int64_t c = 0; c < 3; ++c) {
            const double want = in ? cvm::testing::oracle_bilinear(f.data(), 8, 8, c, q.x(), q.y()) : 0.0;
            EXPECT_NEAR(s.values.at({d, c, y, x}), want, 1e-6);
          }
        }
  }
}

TEST(WarpFeatures, UnscaledIntrinsicsRejected) {
  geo::CameraIntrinsics full{100, 100, 32, 32, 64, 64};
  EXPECT_THROW(warp_features(Tensor::zeros({2, 8, 8}), full, full, geo::RigidPose::identity(),
                             geo::make_depth_hypotheses(2, 1, 2)),
               ContractError);
}

TEST(CostVolume, DuplicatedViewsGiveSquaredNormConstantOverDepth) {
  Rng rng(4);
  auto f = random_tensor({1, 16, 8, 8}, rng);
  geo::Camera cam{{100, 100, 31.5, 31.5, 64, 64}, geo::RigidPose::identity()};
  auto hyp = geo::make_depth_hypotheses(6, 0.5, 10);
  auto cv = build_cost_volume(ad::concat({f, f}, 0), {cam, cam}, hyp);
  ASSERT_EQ(cv.values.shape(), (ad::Shape{2, 6, 8, 8}));
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t p = 0; p < 64; ++p) {
      double norm2 = 0;
      for (std::int64_t c = 0; c < 16; ++c) norm2 += f.data()[c * 64 + p] * f.data()[c * 64 + p];
      for (std::int64_t d = 0; d < 6; ++d) EXPECT_NEAR(cv.values.data()[(i * 6 + d) * 64 + p], norm2 / 4.0, 1e-12);
    }
  for (auto v : cv.validity) EXPECT_EQ(v, 1.0);
}

TEST(CostVolume, PaperShape) {
  Rng rng(5);
  auto cams = random_rig(rng, 2, 64);
  ad::NoGradGuard ng;
  auto cv = build_cost_volume(random_tensor({2, 128, 8, 8}, rng), cams, geo::make_depth_hypotheses(128, 0.0001, 10));
  EXPECT_EQ(cv.values.shape(), (ad::Shape{2, 128, 8, 8}));
  for (auto v : cv.values.data()) EXPECT_TRUE(std::isfinite(v));
  for (auto v : cv.validity) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(CostVolume, MatchesLiteralTranscription) {
  Rng rng(6);
  double covered = 0;
  for (int t = 0; t < 50; ++t) {
    const std::int64_t v = 2 + static_cast<std::int64_t>(rng.below(2));
    const std::int64_t l = 2 + static_cast<std::int64_t>(rng.below(7));
    const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(16));
    auto cams = random_rig(rng, v, 64);
    auto feats = random_tensor({v, k, 8, 8}, rng);
    auto hyp = geo::make_depth_hypotheses(l, rng.uniform(0.5, 1.5), rng.uniform(2, 8));
    auto cv = build_cost_volume(feats, cams, hyp);
    auto want = cvm::testing::oracle_cost_volume(feats, downscale(cams, 8), hyp.depths);
    EXPECT_LT(max_abs_diff(cv.values.data(), want), 1e-6) << "trial " << t;
    const auto nonzero = std::count_if(want.begin(), want.end(), [](double x) { return x != 0.0; });
    covered += static_cast<double>(nonzero) / static_cast<double>(want.size());
  }
  EXPECT_GT(covered / 50, 0.3);  // the rigs overlap, so most samples are live
}

TEST(CostVolume, CollapsedReadingSumsOverDepth) {
  Rng rng(7);
  auto cams = random_rig(rng, 3, 64);
  auto feats = random_tensor({3, 5, 8, 8}, rng);
  auto hyp = geo::make_depth_hypotheses(4, 1, 5);
  auto per = build_cost_volume(feats, cams, hyp);
  CostVolumeOptions opt;
  opt.reduction = DepthReduction::Collapsed;
  auto col = build_cost_volume(feats, cams, hyp, opt);
  ASSERT_EQ(col.values.shape(), (ad::Shape{3, 1, 8, 8}));
  auto summed = ad::sum(per.values, 1, true);
  EXPECT_LT(max_abs_diff(col.values.data(), summed.data()), 1e-12);
}

TEST(CostVolume, ScaleCovariance) {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    auto cams = random_rig(rng, 2, 64);
    auto feats = random_tensor({2, 6, 8, 8}, rng);
    auto hyp = geo::make_depth_hypotheses(4, 1, 5);
    const double alpha = 2.0;  // a power of two keeps the scaling exact
    auto a = build_cost_volume(feats, cams, hyp);
    auto b = build_cost_volume(ad::scale(feats, alpha), cams, hyp);
    for (std::int64_t i = 0; i < a.values.numel(); ++i)
      EXPECT_EQ(b.values.data()[i], alpha * alpha * a.values.data()[i]);
  }
}

TEST(CostVolume, PeakAtTruthOnTexturedPlane) {
  // Fronto-parallel plane z = d* seen by a reference camera at the origin and a
  // neighbour shifted along x. Features: a unit-normalised smooth vector field
  // evaluated at the ray/plane hit point, so both views see the same surface.
  const std::int64_t n = 24, k = 6;
  const double f = 20, d_true = 2.0;
  geo::Camera ci{{f, f, (n - 1) / 2.0, (n - 1) / 2.0, n, n}, geo::RigidPose::identity()};
  geo::Camera cj = ci;
  cj.pose.translation = geo::Vec3(-0.3, 0, 0);
  auto feature_at = [&](const geo::Camera& cam, std::int64_t x, std::int64_t y, double* out) {
    const geo::Vec3 ray = cam.intrinsics.backproject(x, y, 1.0);
    const geo::Vec3 c = cam.pose.center();
    const double s = (d_true - c.z()) / ray.z();
    const geo::Vec3 hit = c + cam.pose.rotation.transpose() * ray * s;
    double norm = 0;
    for (std::int64_t ch = 0; ch < k; ++ch) {
      out[ch] = std::sin(2.3 * hit.x() * (ch + 1) + 0.7 * ch) + std::cos(1.9 * hit.y() * (k - ch) + 0.3 * ch);
      norm += out[ch] * out[ch];
    }
    for (std::int64_t ch = 0; ch < k; ++ch) out[ch] /= std::sqrt(norm);
  };
  std::vector<double> fv(static_cast<std::size_t>(2 * k * n * n));
  for (int v = 0; v < 2; ++v)
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        double buf[k];
        feature_at(v ? cj : ci, x, y, buf);
        for (std::int64_t ch = 0; ch < k; ++ch) fv[((v * k + ch) * n + y) * n + x] = buf[ch];
      }
  auto feats = Tensor::from({2, k, n, n}, fv);
  auto hyp = geo::make_depth_hypotheses(16, 1.0, 6.0);
  CostVolumeOptions opt;
  opt.downsample_factor = 1;
  auto cv = build_cost_volume(feats, {ci, cj}, hyp, opt);
  std::size_t nearest = 0;
  for (std::size_t d = 1; d < hyp.size(); ++d)
    if (std::fabs(hyp.depths[d] - d_true) < std::fabs(hyp.depths[nearest] - d_true)) nearest = d;
  int hits = 0, cells = 0;
  for (std::int64_t p = 0; p < n * n; ++p) {
    if (cv.validity[p] < 1.0) continue;  // view 0, every depth in bounds
    ++cells;
    std::size_t best = 0;
    for (std::size_t d = 1; d < hyp.size(); ++d)
      if (cv.values.data()[d * n * n + p] > cv.values.data()[best * n * n + p]) best = d;
    hits += best == nearest;
  }
  ASSERT_GT(cells, 50);
  EXPECT_GE(static_cast<double>(hits) / cells, 0.9);
}

TEST(CostVolume, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  for (int t = 0; t < 5; ++t) {
    auto cams = random_rig(rng, 2 + t % 2, 32);
    auto hyp = geo::make_depth_hypotheses(3, 1, 4);
    const auto v = static_cast<std::int64_t>(cams.size());
    auto w = random_tensor({v, 3, 4, 4}, rng);
    auto res = cvm::testing::grad_check(
        [&](const std::vector<Tensor>& in) { return ad::sum(ad::mul(build_cost_volume(in[0], cams, hyp).values, w)); },
        {random_tensor({v, 4, 4, 4}, rng)});
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
  }
}

TEST(CostVolume, ContractErrors) {
  geo::Camera cam{{100, 100, 31.5, 31.5, 64, 64}, geo::RigidPose::identity()};
  auto hyp = geo::make_depth_hypotheses(2, 1, 2);
  EXPECT_THROW(build_cost_volume(Tensor::zeros({1, 4, 8, 8}), {cam}, hyp), ContractError);
  EXPECT_THROW(build_cost_volume(Tensor::zeros({2, 4, 8, 8}), {cam}, hyp), ContractError);
  EXPECT_THROW(build_cost_volume(Tensor::zeros({2, 4, 8}), {cam, cam}, hyp), DimensionError);
}

TEST(CostVolume, DumpLayout) {
  Rng rng(10);
  geo::Camera cam{{100, 100, 31.5, 31.5, 64, 64}, geo::RigidPose::identity()};
  auto cv = build_cost_volume(random_tensor({2, 3, 8, 8}, rng), {cam, cam}, geo::make_depth_hypotheses(3, 1, 2));
  const auto path = std::filesystem::temp_directory_path() / "cvm_cost_dump.bin";
  write_cost_volume_dump(path, cv);
  std::ifstream is(path, std::ios::binary);
  std::int64_t hdr[4];
  is.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  EXPECT_EQ(hdr[0], 2);
  EXPECT_EQ(hdr[1], 3);
  EXPECT_EQ(hdr[2], 8);
  EXPECT_EQ(hdr[3], 8);
  std::vector<double> body(static_cast<std::size_t>(cv.values.numel()));
  is.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size() * sizeof(double)));
  EXPECT_EQ(max_abs_diff(body, cv.values.data()), 0.0);
  std::filesystem::remove(path);
}
