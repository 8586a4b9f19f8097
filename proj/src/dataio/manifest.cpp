// SPDX-License-Identifier: Apache-2.0
#include "cvm/dataio/manifest.hpp"

#include <algorithm>
#include <fstream>

#include "cvm/core/error.hpp"
#include "cvm/dataio/image_io.hpp"

namespace cvm::io {

using nlohmann::json;

bool operator==(const ViewRecord& a, const ViewRecord& b) {
  const auto& ka = a.camera.intrinsics;
  const auto& kb = b.camera.intrinsics;
  return a.image == b.image && a.labels == b.labels && ka.fx == kb.fx && ka.fy == kb.fy && ka.cx == kb.cx &&
         ka.cy == kb.cy && ka.width == kb.width && ka.height == kb.height &&
         a.camera.pose.rotation == b.camera.pose.rotation && a.camera.pose.translation == b.camera.pose.translation;
}

bool operator==(const SampleRecord& a, const SampleRecord& b) {
  return a.id == b.id && a.split == b.split && a.tasks == b.tasks && a.depth_scale == b.depth_scale &&
         a.views == b.views;
}

json record_to_json(const SampleRecord& r) {
  json views = json::array();
  for (const auto& v : r.views) {
    const auto& k = v.camera.intrinsics;
    const auto& R = v.camera.pose.rotation;
    const auto& t = v.camera.pose.translation;
    json rot = json::array();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) rot.push_back(R(i, j));
    views.push_back({{"image", v.image},
                     {"camera", {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}}},
                     {"pose", {{"rotation", rot}, {"translation", {t.x(), t.y(), t.z()}}}},
                     {"labels", v.labels}});
  }
  json j = {{"id", r.id}, {"split", r.split}, {"tasks", r.tasks}, {"views", views}};
  if (r.depth_scale) j["depth_scale"] = *r.depth_scale;
  return j;
}

SampleRecord record_from_json(const json& j) {
  try {
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.split = j.value("split", std::string("train"));
    r.tasks = j.at("tasks").get<std::vector<std::string>>();
    if (j.contains("depth_scale")) r.depth_scale = j.at("depth_scale").get<double>();
    for (const auto& jv : j.at("views")) {
      ViewRecord v;
      v.image = jv.at("image").get<std::string>();
      const auto& c = jv.at("camera");
      auto& k = v.camera.intrinsics;
      k.fx = c.at("fx").get<double>();
      k.fy = c.at("fy").get<double>();
      k.cx = c.at("cx").get<double>();
      k.cy = c.at("cy").get<double>();
      k.width = c.at("width").get<std::int64_t>();
      k.height = c.at("height").get<std::int64_t>();
      const auto rot = jv.at("pose").at("rotation").get<std::vector<double>>();
      const auto tr = jv.at("pose").at("translation").get<std::vector<double>>();
      if (rot.size() != 9 || tr.size() != 3) throw DataError("record " + r.id + ": pose needs 9 + 3 values");
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) v.camera.pose.rotation(a, b) = rot[a * 3 + b];
        v.camera.pose.translation[a] = tr[a];
      }
      if (jv.contains("labels")) v.labels = jv.at("labels").get<std::map<std::string, std::string>>();
      r.views.push_back(std::move(v));
    }
    if (r.views.empty()) throw DataError("record " + r.id + " has no views");
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest record: ") + e.what());
  }
}

std::vector<const SampleRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SampleRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (check_files) {
      auto require = [&](const std::string& rel) {
        if (!std::filesystem::exists(m.root / rel))
          throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing file " + (m.root / rel).string());
      };
      for (const auto& v : r.views) {
        require(v.image);
        for (const auto& [task, p] : v.labels) require(p);
      }
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) os << record_to_json(r).dump() << '\n';
  if (!os) throw IoError("failed writing manifest " + path.string());
}

bool Sample::has_task(const std::string& t) const { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); }

Sample load_sample(const DatasetManifest& m, const SampleRecord& r) {
  Sample s;
  s.id = r.id;
  s.tasks = r.tasks;
  for (const auto& vr : r.views) {
    SampleView v;
    v.camera = vr.camera;
    const ad::Tensor img = load_image(m.root / vr.image);
    const std::int64_t h = img.dim(1), w = img.dim(2), p = h * w;
    if (s.views.empty()) {
      s.height = h;
      s.width = w;
    } else if (h != s.height || w != s.width) {
      throw DataError("record " + r.id + ": views differ in size");
    }
    if (vr.camera.intrinsics.width != w || vr.camera.intrinsics.height != h)
      throw DataError("record " + r.id + ": camera extents do not match image " + vr.image);
    v.image.assign(img.data().begin(), img.data().end());
    v.segmentation.assign(static_cast<std::size_t>(p), synth::kIgnoreLabel);
    v.depth.assign(static_cast<std::size_t>(p), 0.0);
    v.normal.assign(static_cast<std::size_t>(3 * p), 0.0);
    v.boundary.assign(static_cast<std::size_t>(p), 0);
    auto check = [&](std::int64_t hh, std::int64_t ww, const std::string& what) {
      if (hh != h || ww != w) throw DataError("record " + r.id + ": " + what + " map size differs from image");
    };
    for (const auto& [task, rel] : vr.labels) {
      const auto full = m.root / rel;
      if (task == "segmentation") {
        auto l = load_labels(full);
        check(l.height, l.width, task);
        v.segmentation = std::move(l.values);
      } else if (task == "depth") {
        const auto d = load_depth(full, r.depth_scale);
        check(d.dim(1), d.dim(2), task);
        v.depth.assign(d.data().begin(), d.data().end());
      } else if (task == "normal") {
        const auto n = read_pfm(full);
        if (n.channels != 3) throw DataError("normal map must have three channels: " + full.string());
        check(n.height, n.width, task);
        v.normal.assign(n.data.begin(), n.data.end());
      } else if (task == "boundary") {
        const auto l = load_labels(full);
        check(l.height, l.width, task);
        for (std::int64_t q = 0; q < p; ++q) v.boundary[q] = l.values[q] > 0;
      } else {
        throw DataError("record " + r.id + ": unsupported label kind '" + task + "'");
      }
    }
    s.views.push_back(std::move(v));
  }
  return s;
}

Sample from_rendered(const synth::RenderedSample& rs, const std::string& id) {
  Sample s;
  s.id = id;
  s.height = rs.height;
  s.width = rs.width;
  s.tasks = rs.labelled_tasks;
  for (const auto& rv : rs.views) {
    SampleView v;
    v.camera = rv.camera;
    v.image = rv.image;
    v.segmentation = rv.labels;
    v.depth = rv.depth;
    v.normal = rv.normal;
    v.boundary = rv.boundary;
    s.views.push_back(std::move(v));
  }
  return s;
}

SampleRecord save_rendered(const synth::RenderedSample& s, const std::filesystem::path& root, const std::string& id,
                           const std::string& split) {
  std::filesystem::create_directories(root / id);
  SampleRecord r;
  r.id = id;
  r.split = split;
  r.tasks = s.labelled_tasks;
  const std::int64_t h = s.height, w = s.width;
  auto has = [&](const char* t) { return std::find(r.tasks.begin(), r.tasks.end(), t) != r.tasks.end(); };
  for (std::size_t k = 0; k < s.views.size(); ++k) {
    const auto& v = s.views[k];
    const std::string stem = id + "/v" + std::to_string(k) + "_";
    ViewRecord vr;
    vr.camera = v.camera;
    vr.image = stem + "image.png";
    save_image(root / vr.image, v.image, h, w);
    if (has("segmentation")) {
      vr.labels["segmentation"] = stem + "seg.png";
      save_labels(root / vr.labels["segmentation"], v.labels, h, w);
    }
    if (has("depth")) {
      vr.labels["depth"] = stem + "depth.pfm";
      write_pfm(root / vr.labels["depth"], {w, h, 1, std::vector<float>(v.depth.begin(), v.depth.end())});
    }
    if (has("normal")) {
      vr.labels["normal"] = stem + "normal.pfm";
      write_pfm(root / vr.labels["normal"], {w, h, 3, std::vector<float>(v.normal.begin(), v.normal.end())});
    }
    if (has("boundary")) {
      vr.labels["boundary"] = stem + "boundary.png";
      save_labels(root / vr.labels["boundary"], std::vector<std::int32_t>(v.boundary.begin(), v.boundary.end()), h, w);
    }
    r.views.push_back(std::move(vr));
  }
  return r;
}

}  // namespace cvm::io
