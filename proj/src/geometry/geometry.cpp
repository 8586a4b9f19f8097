// SPDX-License-Identifier: Apache-2.0
#include "cvm/geometry/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cmath>
#include <sstream>

#include "cvm/core/error.hpp"

namespace cvm::geo {

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw InvariantError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvariantError("camera extents must be positive");
  if (!(cx >= 0 && cx < static_cast<double>(width) && cy >= 0 && cy < static_cast<double>(height))) {
    std::ostringstream os;
    os << "principal point (" << cx << ", " << cy << ") outside " << width << "x" << height << " image";
    throw InvariantError(os.str());
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

CameraIntrinsics CameraIntrinsics::downscaled(std::int64_t factor) const {
  if (factor < 1) throw ContractError("downscale factor must be >= 1");
  const double f = static_cast<double>(factor);
  return {fx / f, fy / f, cx / f, cy / f, (width + factor - 1) / factor, (height + factor - 1) / factor};
}

void RigidPose::validate(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (!(ortho <= tol) || !(std::fabs(det - 1.0) <= tol)) {
    std::ostringstream os;
    os << "rotation is not orthonormal: max|R^T R - I| = " << ortho << ", det = " << det;
    throw InvariantError(os.str());
  }
  if (!translation.allFinite()) throw InvariantError("pose translation is not finite");
}

RigidPose RigidPose::inverse() const {
  RigidPose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidPose from_axis_angle(const Vec3& omega, const Vec3& t) {
  RigidPose p;
  const double angle = omega.norm();
  if (angle > 0) p.rotation = Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
  p.translation = t;
  return p;
}

RigidPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = (-up).cross(z);
  if (x.norm() < 1e-12) throw DomainError("look_at: viewing direction parallel to up");
  x.normalize();
  const Vec3 y = z.cross(x);
  RigidPose p;
  p.rotation.row(0) = x.transpose();
  p.rotation.row(1) = y.transpose();
  p.rotation.row(2) = z.transpose();
  p.translation = -(p.rotation * eye);
  return p;
}

RigidPose operator*(const RigidPose& a, const RigidPose& b) {
  RigidPose c;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.rotation * b.translation + a.translation;
  return c;
}

RigidPose relative_pose(const RigidPose& pose_i, const RigidPose& pose_j) {
  pose_i.validate();
  pose_j.validate();
  if (pose_i.rotation == pose_j.rotation && pose_i.translation == pose_j.translation) return RigidPose::identity();
  return pose_j * pose_i.inverse();
}

DepthHypothesisSet make_depth_hypotheses(std::int64_t count, double d_min, double d_max) {
  if (count < 2) throw DomainError("depth hypothesis count must be >= 2, got " + std::to_string(count));
  if (!(d_min > 0) || !(d_max > d_min) || !std::isfinite(d_max)) {
    std::ostringstream os;
    os << "depth range must satisfy 0 < d_min < d_max, got [" << d_min << ", " << d_max << "]";
    throw DomainError(os.str());
  }
  DepthHypothesisSet h;
  h.d_min = d_min;
  h.d_max = d_max;
  h.depths.resize(static_cast<std::size_t>(count));
  const double inv_far = 1.0 / d_max, inv_near = 1.0 / d_min;
  const double step = (inv_near - inv_far) / static_cast<double>(count - 1);
  for (std::int64_t k = 0; k < count; ++k) h.depths[k] = 1.0 / (inv_far + step * static_cast<double>(k));
  // Pin the endpoints so they equal the requested bounds bit for bit.
  h.depths.front() = d_max;
  h.depths.back() = d_min;
  return h;
}

namespace {

void fill_grid(const CameraIntrinsics& intr_i, const CameraIntrinsics& intr_j, const RigidPose& rel, double depth,
               std::int64_t height, std::int64_t width, double* coords, std::uint8_t* valid) {
  if (!(depth > 0) || !std::isfinite(depth)) {
    std::ostringstream os;
    os << "warp depth must be positive, got " << depth;
    throw DomainError(os.str());
  }
  // Same camera: every ray maps onto itself, independent of depth. Written
  // directly so duplicated views warp exactly rather than to within rounding.
  const bool same_camera = rel.rotation == Mat3::Identity() && rel.translation == Vec3::Zero() &&
                           intr_i.fx == intr_j.fx && intr_i.fy == intr_j.fy && intr_i.cx == intr_j.cx &&
                           intr_i.cy == intr_j.cy;
  if (same_camera) {
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t x = 0; x < width; ++x) {
        const std::int64_t p = y * width + x;
        coords[2 * p] = static_cast<double>(x);
        coords[2 * p + 1] = static_cast<double>(y);
        valid[p] = intr_j.contains(coords[2 * p], coords[2 * p + 1]) ? 1 : 0;
      }
    return;
  }
  // p_j = R (d K_i^{-1} [x y 1]) + t, expanded per pixel.
  const Mat3& r = rel.rotation;
  const Vec3& t = rel.translation;
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) {
      const std::int64_t p = y * width + x;
      const Vec3 pj = r * intr_i.backproject(static_cast<double>(x), static_cast<double>(y), depth) + t;
      if (pj.z() <= 1e-12) {
        coords[2 * p] = kBehindCamera;
        coords[2 * p + 1] = kBehindCamera;
        valid[p] = 0;
        continue;
      }
      const Vec2 q = intr_j.project(pj);
      coords[2 * p] = q.x();
      coords[2 * p + 1] = q.y();
      valid[p] = intr_j.contains(q.x(), q.y()) ? 1 : 0;
    }
}

}  // namespace

WarpGrid warp_grid(const CameraIntrinsics& intr_i, const CameraIntrinsics& intr_j, const RigidPose& rel_j_from_i,
                   double depth, std::int64_t height, std::int64_t width) {
  WarpGrid g;
  g.height = height;
  g.width = width;
  g.coords.resize(static_cast<std::size_t>(2 * height * width));
  g.valid.resize(static_cast<std::size_t>(height * width));
  fill_grid(intr_i, intr_j, rel_j_from_i, depth, height, width, g.coords.data(), g.valid.data());
  return g;
}

WarpGrid warp_grid_stack(const CameraIntrinsics& intr_i, const CameraIntrinsics& intr_j,
                         const RigidPose& rel_j_from_i, const DepthHypothesisSet& hyp, std::int64_t height,
                         std::int64_t width) {
  WarpGrid g;
  g.height = height;
  g.width = width;
  const std::int64_t P = height * width, L = static_cast<std::int64_t>(hyp.size());
  g.coords.resize(static_cast<std::size_t>(2 * L * P));
  g.valid.resize(static_cast<std::size_t>(L * P));
  for (std::int64_t d = 0; d < L; ++d)
    fill_grid(intr_i, intr_j, rel_j_from_i, hyp.depths[d], height, width, g.coords.data() + 2 * d * P,
              g.valid.data() + d * P);
  return g;
}

}  // namespace cvm::geo
