// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with the sections "model", "cvm",
// "geometry", "training", "metrics" and "synth". Every key is optional and
// falls back to its default; unknown keys anywhere are rejected. The hash is
// taken over the fully resolved document, so it ignores key order and whether
// a default was spelled out.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cvm/mtl/model.hpp"
#include "cvm/mtl/train.hpp"
#include "cvm/synth/synth.hpp"

namespace cvm::io {

struct MetricsConfig {
  double boundary_tolerance_fraction = 0.011;
  std::optional<double> boundary_tolerance_px;
  /// Thresholds k / (count + 1) for k = 1..count.
  std::int64_t thresholds = 33;
  double saliency_beta_sq = 0.3;

  std::vector<double> threshold_values() const;
};

struct SynthConfig {
  synth::SceneSpec scene;  // scene.seed is ignored; per-scene seeds derive from seed
  std::uint64_t seed = 0;
  std::int64_t train_scenes = 16;
  std::int64_t test_scenes = 4;
  /// Extra training records in video mode (depth labels only).
  std::int64_t video_scenes = 0;
  std::int64_t video_frames = 4;

  /// Seed of scene k of a split; splits never share seeds.
  std::uint64_t scene_seed(const std::string& split, std::int64_t k) const;
};

struct RunConfig {
  mtl::ModelConfig model;
  mtl::TrainConfig training;
  MetricsConfig metrics;
  SynthConfig synth;

  void validate() const;
  /// 16 hex digits of FNV-1a over the canonical JSON form.
  std::string hash() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json model_to_json(const mtl::ModelConfig& m);
/// Throws ConfigError naming the dotted path of unknown or mistyped keys.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace cvm::io
