// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifests: one JSON object per line, each a multi-view sample.
//
//   {"id": "s0007", "split": "train", "tasks": ["depth", ...], "depth_scale": 1000,
//    "views": [{"image": "s0007/v0_image.png",
//               "camera": {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..},
//               "pose": {"rotation": [9 values, row-major], "translation": [3 values]},
//               "labels": {"depth": "s0007/v0_depth.pfm", ...}}, ...]}
//
// Paths are relative to the manifest's directory. Poses are world-to-camera
// and all views of a record share one world frame. depth_scale is only needed
// for 16-bit PNG depth.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvm/geometry/geometry.hpp"
#include "cvm/synth/synth.hpp"

namespace cvm::io {

struct ViewRecord {
  std::string image;
  geo::Camera camera;
  std::map<std::string, std::string> labels;  // task -> path
};

struct SampleRecord {
  std::string id;
  std::string split = "train";
  std::vector<std::string> tasks;  // labelled tasks
  std::optional<double> depth_scale;
  std::vector<ViewRecord> views;
};

bool operator==(const ViewRecord& a, const ViewRecord& b);
bool operator==(const SampleRecord& a, const SampleRecord& b);

nlohmann::json record_to_json(const SampleRecord& r);
/// Throws DataError on missing or mistyped fields.
SampleRecord record_from_json(const nlohmann::json& j);

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<SampleRecord> records;

  std::vector<const SampleRecord*> split(const std::string& name) const;
};

/// Throws DataError (with line number) for malformed records and, when
/// check_files is set, for referenced files that do not exist.
DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files = true);
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

/// Dense per-view data as the model consumes it.
struct SampleView {
  geo::Camera camera;
  std::vector<double> image;                // [3,H,W]
  std::vector<std::int32_t> segmentation;   // [H*W], 255 = ignore
  std::vector<double> depth;                // [H*W], <= 0 = no label
  std::vector<double> normal;               // [3,H*W], zero vector = no label
  std::vector<std::uint8_t> boundary;       // [H*W]
  bool labelled = true;                     // false for a duplicated neighbour
};

struct Sample {
  std::string id;
  std::int64_t height = 0, width = 0;
  std::vector<std::string> tasks;
  std::vector<SampleView> views;

  bool has_task(const std::string& t) const;
};

Sample load_sample(const DatasetManifest& m, const SampleRecord& r);
Sample from_rendered(const synth::RenderedSample& s, const std::string& id);

/// Write every view's image and labelled-task maps under root/<id>/ and
/// return the manifest record pointing at them.
SampleRecord save_rendered(const synth::RenderedSample& s, const std::filesystem::path& root, const std::string& id,
                           const std::string& split);

}  // namespace cvm::io
