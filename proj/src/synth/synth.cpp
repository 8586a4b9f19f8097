// SPDX-License-Identifier: Apache-2.0
#include "cvm/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cvm/core/error.hpp"
#include "cvm/core/rng.hpp"

namespace cvm::synth {

using geo::Vec3;

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("synth: image extents must be positive");
  if (views < 1) throw ConfigError("synth: need at least one view");
  if (num_classes < 1) throw ConfigError("synth: need at least one class");
  if (boxes < 0) throw ConfigError("synth: negative box count");
  if (!(d_min > 0) || !(d_max > d_min)) throw ConfigError("synth: depth range must satisfy 0 < d_min < d_max");
  if (baseline_min < 0 || baseline_max < baseline_min) throw ConfigError("synth: bad baseline range");
  if (!(focal_fraction > 0)) throw ConfigError("synth: focal_fraction must be positive");
  if (texture_freq_min < 0 || texture_freq_max < texture_freq_min) throw ConfigError("synth: bad texture range");
  if (max_retries < 0) throw ConfigError("synth: negative retry bound");
}

std::array<double, 3> Texture::albedo(const Vec3& p) const {
  std::array<double, 3> c = base;
  for (std::size_t m = 0; m < waves.size(); ++m) {
    const double arg = waves[m].dot(p);
    for (int ch = 0; ch < 3; ++ch) c[ch] += amplitudes[m] * std::sin(arg + phases[m][ch]);
  }
  for (auto& v : c) v = std::clamp(v, 0.0, 1.0);
  return c;
}

namespace {

constexpr double kMinT = 1e-9;

std::optional<Hit> hit_plane(const Primitive& pr, const Vec3& o, const Vec3& d) {
  const double nd = pr.normal.dot(d);
  if (std::abs(nd) < 1e-15) return std::nullopt;
  const double t = (pr.offset - pr.normal.dot(o)) / nd;
  if (!(t > kMinT)) return std::nullopt;
  Hit h;
  h.t = t;
  h.point = o + t * d;
  h.normal = nd > 0 ? -pr.normal : pr.normal;
  return h;
}

std::optional<Hit> hit_box(const Primitive& pr, const Vec3& o, const Vec3& d) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < pr.lo[a] || o[a] > pr.hi[a]) return std::nullopt;
      continue;
    }
    double t0 = (pr.lo[a] - o[a]) / d[a];
    double t1 = (pr.hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
    }
    t_far = std::min(t_far, t1);
  }
  if (axis < 0 || t_near > t_far || !(t_near > kMinT)) return std::nullopt;
  Hit h;
  h.t = t_near;
  h.point = o + t_near * d;
  h.normal = Vec3::Zero();
  h.normal[axis] = d[axis] > 0 ? -1.0 : 1.0;
  return h;
}

Texture random_texture(Rng& rng, const SceneSpec& spec) {
  Texture tex;
  for (auto& b : tex.base) b = rng.uniform(0.3, 0.7);
  for (int m = 0; m < 3; ++m) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    if (dir.norm() < 1e-12) dir = Vec3::UnitX();
    tex.waves.push_back(dir.normalized() * rng.uniform(spec.texture_freq_min, spec.texture_freq_max));
    tex.phases.push_back({rng.uniform(0, 6.283185307179586), rng.uniform(0, 6.283185307179586),
                          rng.uniform(0, 6.283185307179586)});
    tex.amplitudes.push_back(rng.uniform(0.06, 0.1));
  }
  return tex;
}

Primitive plane(const Vec3& n, double offset, Texture tex) {
  Primitive p;
  p.kind = PrimitiveKind::Plane;
  p.normal = n;
  p.offset = offset;
  p.texture = std::move(tex);
  return p;
}

geo::CameraIntrinsics make_intrinsics(const SceneSpec& spec) {
  geo::CameraIntrinsics k;
  k.fx = k.fy = spec.focal_fraction * static_cast<double>(spec.width);
  k.cx = 0.5 * static_cast<double>(spec.width - 1);
  k.cy = 0.5 * static_cast<double>(spec.height - 1);
  k.width = spec.width;
  k.height = spec.height;
  return k;
}

struct Draft {
  Scene scene;
  std::vector<geo::Camera> cameras;
};

Draft draft_fronto(const SceneSpec& spec, Rng& rng) {
  Draft d;
  const double z = rng.uniform(spec.d_min, spec.d_max);
  d.scene.primitives.push_back(plane(Vec3::UnitZ(), z, random_texture(rng, spec)));
  const auto k = make_intrinsics(spec);
  d.cameras.push_back({k, geo::RigidPose::identity()});
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  for (std::int64_t v = 1; v < spec.views; ++v) {
    const double b = rng.uniform(spec.baseline_min, spec.baseline_max);
    geo::RigidPose pose;
    pose.translation = Vec3(-sign * b * static_cast<double>(v), 0, 0);
    d.cameras.push_back({k, pose});
  }
  return d;
}

Draft draft_room(const SceneSpec& spec, Rng& rng) {
  Draft d;
  const auto k = make_intrinsics(spec);
  const double wall = rng.uniform(0.65, 0.95) * spec.d_max;
  const double floor_y = rng.uniform(0.6, 1.2);
  d.scene.primitives.push_back(plane(Vec3::UnitZ(), wall, random_texture(rng, spec)));
  d.scene.primitives.push_back(plane(Vec3::UnitY(), floor_y, random_texture(rng, spec)));
  const double half_fov = 0.5 * static_cast<double>(spec.width) / k.fx;
  for (std::int64_t b = 0; b < spec.boxes; ++b) {
    const Vec3 size(rng.uniform(0.25, 0.7), rng.uniform(0.25, 0.9), rng.uniform(0.25, 0.7));
    const double z_lo = spec.d_min + 0.3 + 0.5 * size.z();
    const double z_hi = std::max(z_lo, wall - 0.5 * size.z());
    const double cz = rng.uniform(z_lo, z_hi);
    const double cx = rng.uniform(-0.7, 0.7) * half_fov * cz;
    Primitive p;
    p.kind = PrimitiveKind::Box;
    p.lo = Vec3(cx - 0.5 * size.x(), floor_y - size.y(), cz - 0.5 * size.z());
    p.hi = Vec3(cx + 0.5 * size.x(), floor_y, cz + 0.5 * size.z());
    p.texture = random_texture(rng, spec);
    d.scene.primitives.push_back(std::move(p));
  }

  const Vec3 eye0(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0);
  const Vec3 target(rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.3), wall * rng.uniform(0.5, 0.8));
  const double theta = rng.uniform(-0.5236, 0.5236);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const Vec3 dir = Vec3(sign * std::cos(theta), std::sin(theta), rng.uniform(-0.1, 0.1)).normalized();
  const double step = rng.uniform(spec.baseline_min, spec.baseline_max);
  d.cameras.push_back({k, geo::look_at(eye0, target)});
  for (std::int64_t v = 1; v < spec.views; ++v) {
    // Frames of a video share one trajectory; multi-view samples get an
    // independent baseline per extra view.
    Vec3 eye;
    if (spec.video) {
      eye = eye0 + static_cast<double>(v) * step * dir;
    } else {
      const double b = rng.uniform(spec.baseline_min, spec.baseline_max);
      const Vec3 dv = v == 1 ? dir : Vec3(rng.normal(), 0.3 * rng.normal(), 0.1 * rng.normal()).normalized();
      eye = eye0 + b * dv;
    }
    const Vec3 tj = target + Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    d.cameras.push_back({k, geo::look_at(eye, tj)});
  }
  return d;
}

}  // namespace

std::optional<Hit> intersect(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const auto& pr = scene.primitives[i];
    auto h = pr.kind == PrimitiveKind::Plane ? hit_plane(pr, origin, dir) : hit_box(pr, origin, dir);
    if (h && (!best || h->t < best->t)) {
      h->primitive = static_cast<std::int32_t>(i);
      best = h;
    }
  }
  return best;
}

std::optional<Hit> cast_pixel(const Scene& scene, const geo::Camera& cam, double x, double y) {
  const auto& k = cam.intrinsics;
  const Vec3 d_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
  return intersect(scene, cam.pose.center(), cam.pose.rotation.transpose() * d_cam);
}

std::array<double, 3> shade(const Scene& scene, const Hit& hit) {
  auto c = scene.primitives[static_cast<std::size_t>(hit.primitive)].texture.albedo(hit.point);
  const double s = 0.55 + 0.45 * std::max(0.0, hit.normal.dot(scene.light));
  for (auto& v : c) v *= s;
  return c;
}

bool point_inside(const Scene& scene, const Vec3& p, double margin) {
  for (const auto& pr : scene.primitives) {
    if (pr.kind == PrimitiveKind::Plane) {
      if (pr.normal.dot(p) > pr.offset - margin) return true;
    } else if ((p.array() > pr.lo.array() - margin).all() && (p.array() < pr.hi.array() + margin).all()) {
      return true;
    }
  }
  return false;
}

std::vector<std::uint8_t> label_boundaries(const std::vector<std::int32_t>& labels, std::int64_t h, std::int64_t w) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h * w), 0);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto l = labels[y * w + x];
      const bool edge = (x > 0 && labels[y * w + x - 1] != l) || (x + 1 < w && labels[y * w + x + 1] != l) ||
                        (y > 0 && labels[(y - 1) * w + x] != l) || (y + 1 < h && labels[(y + 1) * w + x] != l);
      out[y * w + x] = edge;
    }
  return out;
}

ViewData render_view(const Scene& scene, const geo::Camera& cam, std::int64_t h, std::int64_t w,
                     std::int64_t num_classes) {
  const std::int64_t p = h * w;
  ViewData v;
  v.camera = cam;
  v.image.assign(static_cast<std::size_t>(3 * p), 0.0);
  v.depth.assign(static_cast<std::size_t>(p), 0.0);
  v.normal.assign(static_cast<std::size_t>(3 * p), 0.0);
  v.labels.assign(static_cast<std::size_t>(p), kIgnoreLabel);
  v.primitive.assign(static_cast<std::size_t>(p), -1);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto hit = cast_pixel(scene, cam, static_cast<double>(x), static_cast<double>(y));
      if (!hit) continue;
      const std::int64_t q = y * w + x;
      const auto c = shade(scene, *hit);
      const Vec3 n = cam.pose.rotation * hit->normal;
      for (int ch = 0; ch < 3; ++ch) {
        v.image[ch * p + q] = c[ch];
        v.normal[ch * p + q] = n[ch];
      }
      v.depth[q] = hit->t;
      v.primitive[q] = hit->primitive;
      v.labels[q] = static_cast<std::int32_t>(hit->primitive % num_classes);
    }
  v.boundary = label_boundaries(v.labels, h, w);
  return v;
}

RenderedSample generate(const SceneSpec& spec) {
  spec.validate();
  for (std::int64_t attempt = 0; attempt <= spec.max_retries; ++attempt) {
    Rng rng(spec.seed ^ (static_cast<std::uint64_t>(attempt) * 0x9E3779B97F4A7C15ULL));
    Draft d = spec.layout == Layout::FrontoPlane ? draft_fronto(spec, rng) : draft_room(spec, rng);
    const bool degenerate = std::any_of(d.cameras.begin(), d.cameras.end(), [&](const geo::Camera& c) {
      return point_inside(d.scene, c.pose.center(), 0.05);
    });
    if (degenerate) continue;
    RenderedSample s;
    s.seed = spec.seed;
    s.width = spec.width;
    s.height = spec.height;
    s.retries = attempt;
    for (const auto& cam : d.cameras) s.views.push_back(render_view(d.scene, cam, spec.height, spec.width, spec.num_classes));
    s.labelled_tasks = spec.video ? std::vector<std::string>{"depth"}
                                  : std::vector<std::string>{"segmentation", "depth", "normal", "boundary"};
    s.scene = std::move(d.scene);
    return s;
  }
  throw DataError("synth: seed " + std::to_string(spec.seed) + " gave a camera inside a primitive on all " +
                  std::to_string(spec.max_retries + 1) + " attempts");
}

PhotometricStats photometric_check(const RenderedSample& s, std::int64_t i, std::int64_t j) {
  const auto nviews = static_cast<std::int64_t>(s.views.size());
  if (i < 0 || j < 0 || i >= nviews || j >= nviews) throw ContractError("photometric_check: view index out of range");
  const auto& vi = s.views[i];
  const auto& vj = s.views[j];
  const std::int64_t h = s.height, w = s.width, p = h * w;
  const auto& ki = vi.camera.intrinsics;
  const auto& kj = vj.camera.intrinsics;
  const bool same = vi.camera.pose.rotation == vj.camera.pose.rotation &&
                    vi.camera.pose.translation == vj.camera.pose.translation && ki.fx == kj.fx && ki.fy == kj.fy &&
                    ki.cx == kj.cx && ki.cy == kj.cy;
  const auto rel = geo::relative_pose(vi.camera.pose, vj.camera.pose);

  PhotometricStats st;
  st.mask.assign(static_cast<std::size_t>(p), 0);
  double sum = 0;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t q = y * w + x;
      if (vi.primitive[q] < 0) continue;
      double qx = static_cast<double>(x), qy = static_cast<double>(y), zj = vi.depth[q];
      if (!same) {
        const Vec3 pj = rel.apply(ki.backproject(qx, qy, vi.depth[q]));
        if (!(pj.z() > 1e-12)) continue;
        const auto uv = kj.project(pj);
        qx = uv.x();
        qy = uv.y();
        zj = pj.z();
      }
      if (!kj.contains(qx, qy)) continue;
      const auto x0 = static_cast<std::int64_t>(std::floor(qx)), y0 = static_cast<std::int64_t>(std::floor(qy));
      const std::int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const std::int64_t taps[4] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
      if (!std::all_of(std::begin(taps), std::end(taps),
                       [&](std::int64_t t) { return vj.primitive[t] == vi.primitive[q]; }))
        continue;
      const auto nx = static_cast<std::int64_t>(std::lround(qx)), ny = static_cast<std::int64_t>(std::lround(qy));
      if (std::abs(vj.depth[ny * w + nx] - zj) > 0.02 * zj) continue;
      const double fx = qx - static_cast<double>(x0), fy = qy - static_cast<double>(y0);
      const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      for (int ch = 0; ch < 3; ++ch) {
        double c = 0;
        for (int t = 0; t < 4; ++t) c += wts[t] * vj.image[ch * p + taps[t]];
        sum += std::abs(c - vi.image[ch * p + q]);
      }
      st.mask[q] = 1;
      ++st.covisible;
    }
  st.mean_abs_residual = st.covisible > 0 ? sum / static_cast<double>(3 * st.covisible) : 0.0;
  return st;
}

}  // namespace cvm::synth
