// SPDX-License-Identifier: Apache-2.0
//
// Procedural multi-view scenes with exact ground truth. Scenes are built from
// analytic primitives (infinite planes and axis-aligned boxes) and ray cast
// from every camera, so depth, normals, labels and boundaries follow directly
// from the primitive each ray hits.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvm/geometry/geometry.hpp"

namespace cvm::synth {

enum class Layout {
  Room,        // back wall, floor and boxes seen by converging cameras
  FrontoPlane  // one plane facing view 0, rectified cameras translated along x
};

struct SceneSpec {
  std::uint64_t seed = 0;
  Layout layout = Layout::Room;
  std::int64_t width = 64, height = 64;
  std::int64_t views = 2;
  std::int64_t num_classes = 4;
  std::int64_t boxes = 3;
  double d_min = 0.8, d_max = 5.0;
  double baseline_min = 0.3, baseline_max = 0.8;
  /// Focal length as a fraction of the image width.
  double focal_fraction = 0.8;
  /// World-space angular frequency range of the solid textures, rad/m.
  double texture_freq_min = 4.0, texture_freq_max = 14.0;
  /// Video mode: views become frames along a trajectory labelled with depth only.
  bool video = false;
  std::int64_t max_retries = 32;

  /// Throws ConfigError.
  void validate() const;
};

enum class PrimitiveKind { Plane, Box };

struct Texture {
  std::array<double, 3> base{0.5, 0.5, 0.5};
  std::vector<geo::Vec3> waves;                  // wave vectors
  std::vector<std::array<double, 3>> phases;     // per wave, per channel
  std::vector<double> amplitudes;

  std::array<double, 3> albedo(const geo::Vec3& p) const;
};

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Plane;
  geo::Vec3 normal = geo::Vec3::UnitZ();  // plane: n.x = offset
  double offset = 0;
  geo::Vec3 lo = geo::Vec3::Zero(), hi = geo::Vec3::Zero();  // box extents
  Texture texture;
};

struct Scene {
  std::vector<Primitive> primitives;
  geo::Vec3 light = geo::Vec3(0.3, -0.8, -0.5).normalized();  // towards the light
};

struct Hit {
  double t = 0;  // ray parameter; for camera rays t is the z-depth
  std::int32_t primitive = -1;
  geo::Vec3 point = geo::Vec3::Zero();
  geo::Vec3 normal = geo::Vec3::Zero();  // world frame, unit
};

/// Nearest intersection with t > 1e-9 of origin + t * dir.
std::optional<Hit> intersect(const Scene& scene, const geo::Vec3& origin, const geo::Vec3& dir);

/// Cast the camera ray through continuous pixel (x, y); t of the hit is its z-depth.
std::optional<Hit> cast_pixel(const Scene& scene, const geo::Camera& cam, double x, double y);

/// Lambertian shading of a hit: albedo * (0.55 + 0.45 max(0, n.l)).
std::array<double, 3> shade(const Scene& scene, const Hit& hit);

bool point_inside(const Scene& scene, const geo::Vec3& p, double margin);

inline constexpr std::int32_t kIgnoreLabel = 255;

struct ViewData {
  geo::Camera camera;
  std::vector<double> image;            // [3,H,W] in [0,1]
  std::vector<double> depth;            // [H*W] z-depth, 0 where nothing is hit
  std::vector<double> normal;           // [3,H*W] camera frame, facing the camera
  std::vector<std::int32_t> labels;     // [H*W], kIgnoreLabel where nothing is hit
  std::vector<std::uint8_t> boundary;   // [H*W]
  std::vector<std::int32_t> primitive;  // [H*W], -1 where nothing is hit
};

struct RenderedSample {
  std::uint64_t seed = 0;
  std::int64_t width = 0, height = 0;
  std::int64_t retries = 0;
  std::vector<ViewData> views;
  /// Tasks with labels, e.g. {"segmentation","depth","normal","boundary"}.
  std::vector<std::string> labelled_tasks;
  Scene scene;
};

/// Pixels whose 4-neighbourhood contains a different class label.
std::vector<std::uint8_t> label_boundaries(const std::vector<std::int32_t>& labels, std::int64_t h, std::int64_t w);

ViewData render_view(const Scene& scene, const geo::Camera& cam, std::int64_t h, std::int64_t w,
                     std::int64_t num_classes);

/// Deterministic in spec.seed. Throws DataError when no camera placement
/// outside every primitive is found within max_retries.
RenderedSample generate(const SceneSpec& spec);

struct PhotometricStats {
  double mean_abs_residual = 0;  // over co-visible pixels and channels
  std::int64_t covisible = 0;
  std::vector<std::uint8_t> mask;  // [H*W] of view i
};

/// Warp view j colours into view i through view i's GT depth. A pixel is
/// co-visible when it projects inside view j, all four bilinear neighbours
/// there see the same primitive, and view j's depth agrees with the projected
/// depth (relative tolerance 2%).
PhotometricStats photometric_check(const RenderedSample& s, std::int64_t i = 0, std::int64_t j = 1);

}  // namespace cvm::synth
