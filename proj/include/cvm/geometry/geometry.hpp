// SPDX-License-Identifier: Apache-2.0
//
// Pinhole cameras, rigid poses and plane-sweep warp grids.
//
// Pixel convention: the continuous coordinate (x, y) addresses the centre of
// pixel (col = x, row = y). Grids are in absolute pixel units.

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "cvm/autodiff/tensor.hpp"

namespace cvm::geo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::int64_t width = 0, height = 0;

  /// Throws InvariantError unless fx,fy > 0 and the principal point lies in the image.
  void validate() const;
  Mat3 matrix() const;
  /// Intrinsics of a map downsampled by an integer factor whose cell c is
  /// centred on full-resolution pixel factor*c. Extents round up.
  CameraIntrinsics downscaled(std::int64_t factor) const;

  Vec2 project(const Vec3& p_cam) const { return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy}; }
  /// Point at z-depth `depth` along the ray through pixel (x, y).
  Vec3 backproject(double x, double y, double depth) const {
    return {(x - cx) / fx * depth, (y - cy) / fy * depth, depth};
  }
  bool contains(double x, double y) const {
    return x >= 0 && y >= 0 && x <= static_cast<double>(width - 1) && y <= static_cast<double>(height - 1);
  }
};

/// x_cam = R x_world + t (world-to-camera).
struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidPose identity() { return {}; }
  /// Throws InvariantError when R is not a rotation within tol.
  void validate(double tol = 1e-9) const;
  RigidPose inverse() const;
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  /// Camera centre in world coordinates, -R^T t.
  Vec3 center() const { return -rotation.transpose() * translation; }
};

struct Camera {
  CameraIntrinsics intrinsics;
  RigidPose pose;  // world-to-camera
};

/// Rotation exp(omega^) with translation t.
RigidPose from_axis_angle(const Vec3& omega, const Vec3& t);
/// World-to-camera pose of a camera at `eye` looking at `target`, image y axis
/// pointing along -up (camera +z forward, +x right, +y down). The default up
/// makes a camera at the origin looking along +z the identity pose.
RigidPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, -1, 0));

/// (a * b)(x) = a(b(x)).
RigidPose operator*(const RigidPose& a, const RigidPose& b);

/// T_{j<-i} = pose_j * pose_i^{-1}: view-i camera coordinates to view-j camera coordinates.
/// Equal poses give the exact identity.
RigidPose relative_pose(const RigidPose& pose_i, const RigidPose& pose_j);

struct DepthHypothesisSet {
  std::vector<double> depths;  // far to near: depths[0] == d_max
  double d_min = 0, d_max = 0;
  std::size_t size() const { return depths.size(); }
};

/// L depths uniformly spaced in inverse depth between 1/d_max and 1/d_min,
/// ordered far to near.
DepthHypothesisSet make_depth_hypotheses(std::int64_t count, double d_min, double d_max);

struct WarpGrid {
  std::int64_t height = 0, width = 0;
  std::vector<double> coords;       // [H*W*2], (x, y) in view-j pixels
  std::vector<std::uint8_t> valid;  // [H*W], in front of camera j and inside its image

  ad::Tensor tensor() const { return ad::Tensor::from({height, width, 2}, coords); }
};

/// Coordinate written for points behind camera j. Far enough outside any map
/// that a bilinear footprint there reads only zeros.
inline constexpr double kBehindCamera = -2.0;

/// For every pixel p of an HxW grid in view i, the view-j pixel of the point
/// backprojected from p at z-depth `depth`.
WarpGrid warp_grid(const CameraIntrinsics& intr_i, const CameraIntrinsics& intr_j, const RigidPose& rel_j_from_i,
                   double depth, std::int64_t height, std::int64_t width);

/// warp_grid for every hypothesis, concatenated: coords [L*H*W*2], valid [L*H*W].
WarpGrid warp_grid_stack(const CameraIntrinsics& intr_i, const CameraIntrinsics& intr_j,
                         const RigidPose& rel_j_from_i, const DepthHypothesisSet& hyp, std::int64_t height,
                         std::int64_t width);

}  // namespace cvm::geo
