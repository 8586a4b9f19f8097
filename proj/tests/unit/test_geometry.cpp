// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "cvm/core/error.hpp"
#include "cvm/geometry/geometry.hpp"
#include "random_geometry.hpp"

using namespace cvm;
using namespace cvm::geo;
using cvm::testing::collinearity_residual;
using cvm::testing::random_intrinsics;
using cvm::testing::random_pose;

namespace {

double pose_distance(const RigidPose& a, const RigidPose& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(),
                  (a.translation - b.translation).cwiseAbs().maxCoeff());
}

}  // namespace

TEST(Hypotheses, PaperRangeEndpoints) {
  auto h = make_depth_hypotheses(128, 0.0001, 10);
  ASSERT_EQ(h.size(), 128u);
  EXPECT_EQ(h.depths.front(), 10.0);
  EXPECT_EQ(h.depths.back(), 0.0001);
}

TEST(Hypotheses, SmallCases) {
  auto two = make_depth_hypotheses(2, 1, 2);
  EXPECT_EQ(two.depths, (std::vector<double>{2.0, 1.0}));
  auto three = make_depth_hypotheses(3, 0.5, 1);
  EXPECT_NEAR(three.depths[0], 1.0, 1e-15);
  EXPECT_NEAR(three.depths[1], 1.0 / 1.5, 1e-15);
  EXPECT_NEAR(three.depths[2], 0.5, 1e-15);
}

TEST(Hypotheses, InverseDepthUniformAndMonotone) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const double dmin = rng.uniform(0.1, 2), dmax = dmin + rng.uniform(0.1, 10);
    const auto L = 2 + static_cast<std::int64_t>(rng.below(200));
    auto h = make_depth_hypotheses(L, dmin, dmax);
    const double step = 1 / h.depths[1] - 1 / h.depths[0];
    for (std::size_t k = 1; k < h.size(); ++k) {
      EXPECT_LT(h.depths[k], h.depths[k - 1]);
      EXPECT_NEAR(1 / h.depths[k] - 1 / h.depths[k - 1], step, 1e-12 * std::max(1.0, 1 / dmin));
      EXPECT_GE(h.depths[k], dmin);
      EXPECT_LE(h.depths[k], dmax);
    }
  }
}

TEST(Hypotheses, RejectsBadRanges) {
  EXPECT_THROW(make_depth_hypotheses(4, 0, 1), DomainError);
  EXPECT_THROW(make_depth_hypotheses(4, -1, 1), DomainError);
  EXPECT_THROW(make_depth_hypotheses(4, 2, 1), DomainError);
  EXPECT_THROW(make_depth_hypotheses(4, 1, 1), DomainError);
  EXPECT_THROW(make_depth_hypotheses(1, 1, 2), DomainError);
}

TEST(Poses, RelativeExamples) {
  auto self = relative_pose(RigidPose::identity(), RigidPose::identity());
  EXPECT_EQ(pose_distance(self, RigidPose::identity()), 0.0);
  RigidPose j;
  j.translation = Vec3(1, 0, 0);
  auto rel = relative_pose(RigidPose::identity(), j);
  EXPECT_EQ(rel.translation, Vec3(1, 0, 0));
  Rng rng(2);
  auto a = random_pose(rng);
  EXPECT_LT(pose_distance(relative_pose(a, a), RigidPose::identity()), 1e-12);
  const auto exact = relative_pose(a, a);
  EXPECT_TRUE(exact.rotation == Mat3::Identity() && exact.translation == Vec3::Zero());
}

TEST(Poses, GroupLaws) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    auto a = random_pose(rng, 3.0, 2.0), b = random_pose(rng, 3.0, 2.0), c = random_pose(rng, 3.0, 2.0);
    EXPECT_LT(pose_distance((a * b) * c, a * (b * c)), 1e-9);
    EXPECT_LT(pose_distance(a * a.inverse(), RigidPose::identity()), 1e-9);
    EXPECT_LT(pose_distance(relative_pose(a, b) * relative_pose(b, a), RigidPose::identity()), 1e-9);
    // Relative pose maps view-a camera coordinates of a world point to view-b coordinates.
    const Vec3 x(rng.normal(), rng.normal(), rng.normal());
    EXPECT_LT((relative_pose(a, b).apply(a.apply(x)) - b.apply(x)).norm(), 1e-9);
  }
}

TEST(Poses, NonOrthonormalRotationRejected) {
  RigidPose bad;
  bad.rotation(0, 0) = 1.01;
  EXPECT_THROW(bad.validate(), InvariantError);
  EXPECT_THROW(relative_pose(bad, RigidPose::identity()), InvariantError);
  RigidPose mirror;
  mirror.rotation(2, 2) = -1;
  EXPECT_THROW(mirror.validate(), InvariantError);
}

TEST(Poses, LookAtDefaultIsIdentityAndCentreMatches) {
  auto p = look_at(Vec3::Zero(), Vec3(0, 0, 1));
  EXPECT_LT(pose_distance(p, RigidPose::identity()), 1e-15);
  auto q = look_at(Vec3(1, -0.5, -2), Vec3(0.2, 0.1, 3));
  q.validate();
  EXPECT_LT((q.center() - Vec3(1, -0.5, -2)).norm(), 1e-12);
  const Vec3 ahead = q.apply(Vec3(0.2, 0.1, 3));
  EXPECT_NEAR(ahead.x(), 0, 1e-12);
  EXPECT_NEAR(ahead.y(), 0, 1e-12);
  EXPECT_GT(ahead.z(), 0);
}

TEST(Intrinsics, ValidateAndDownscale) {
  CameraIntrinsics k{100, 100, 32, 32, 64, 64};
  k.validate();
  EXPECT_THROW((CameraIntrinsics{0, 100, 32, 32, 64, 64}.validate()), InvariantError);
  EXPECT_THROW((CameraIntrinsics{100, 100, 64, 32, 64, 64}.validate()), InvariantError);
  auto s = k.downscaled(8);
  EXPECT_EQ(s.fx, 12.5);
  EXPECT_EQ(s.cx, 4.0);
  EXPECT_EQ(s.width, 8);
  EXPECT_EQ((CameraIntrinsics{100, 100, 32, 32, 65, 63}.downscaled(8).width), 9);
  // Full-resolution pixel 8c projects to feature cell c.
  const Vec3 p = k.backproject(40, 16, 3.0);
  const Vec2 q = s.project(p);
  EXPECT_NEAR(q.x(), 5.0, 1e-12);
  EXPECT_NEAR(q.y(), 2.0, 1e-12);
}

TEST(Intrinsics, ProjectBackprojectRoundTrip) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    auto k = random_intrinsics(rng, 64, 48);
    for (int y = 0; y < 48; y += 3)
      for (int x = 0; x < 64; x += 3) {
        const double d = rng.uniform(0.01, 100);
        const Vec2 q = k.project(k.backproject(x, y, d));
        EXPECT_NEAR(q.x(), x, 1e-9);
        EXPECT_NEAR(q.y(), y, 1e-9);
      }
  }
}

TEST(Warp, IdentityPoseIsIdentityGrid) {
  CameraIntrinsics k{100, 90, 31.5, 20, 64, 40};
  for (double d : {0.3, 2.0, 50.0}) {
    auto g = warp_grid(k, k, RigidPose::identity(), d, 40, 64);
    for (std::int64_t y = 0; y < 40; ++y)
      for (std::int64_t x = 0; x < 64; ++x) {
        const auto p = y * 64 + x;
        EXPECT_EQ(g.coords[2 * p], static_cast<double>(x));
        EXPECT_EQ(g.coords[2 * p + 1], static_cast<double>(y));
        EXPECT_EQ(g.valid[p], 1);
      }
  }
}

TEST(Warp, RectifiedStereoShift) {
  CameraIntrinsics k{100, 100, 32, 32, 64, 64};
  RigidPose rel;
  rel.translation = Vec3(-0.2, 0, 0);  // camera j sits 0.2 m to the right of camera i
  auto g = warp_grid(k, k, rel, 2.0, 64, 64);
  for (std::int64_t p = 0; p < 64 * 64; ++p) {
    EXPECT_NEAR(g.coords[2 * p] - static_cast<double>(p % 64), -10.0, 1e-9);
    EXPECT_NEAR(g.coords[2 * p + 1], static_cast<double>(p / 64), 1e-9);
    EXPECT_EQ(g.valid[p], p % 64 >= 10 ? 1 : 0);
  }
}

TEST(Warp, EpipolarCollinearity) {
  Rng rng(5);
  auto hyp = make_depth_hypotheses(32, 0.5, 20);
  for (int t = 0; t < 100; ++t) {
    auto ki = random_intrinsics(rng, 32, 24), kj = random_intrinsics(rng, 32, 24);
    auto rel = random_pose(rng);
    auto g = warp_grid_stack(ki, kj, rel, hyp, 24, 32);
    const std::int64_t P = 24 * 32;
    for (std::int64_t p = 0; p < P; p += 37) {
      std::vector<Vec2> pts;
      for (std::size_t d = 0; d < hyp.size(); ++d)
        if (g.coords[2 * (d * P + p)] != kBehindCamera || g.coords[2 * (d * P + p) + 1] != kBehindCamera)
          pts.emplace_back(g.coords[2 * (d * P + p)], g.coords[2 * (d * P + p) + 1]);
      if (pts.size() < 3) continue;
      EXPECT_LT(collinearity_residual(pts), 1e-6);
    }
  }
}

TEST(Warp, BehindCameraIsInvalidAndDepthMustBePositive) {
  CameraIntrinsics k{50, 50, 8, 8, 16, 16};
  RigidPose flip = from_axis_angle(Vec3(0, M_PI, 0), Vec3::Zero());
  auto g = warp_grid(k, k, flip, 1.0, 16, 16);
  for (auto v : g.valid) EXPECT_EQ(v, 0);
  EXPECT_EQ(g.coords[0], kBehindCamera);
  EXPECT_THROW(warp_grid(k, k, RigidPose::identity(), 0.0, 16, 16), DomainError);
  EXPECT_THROW(warp_grid(k, k, RigidPose::identity(), -1.0, 16, 16), DomainError);
}
