// SPDX-License-Identifier: Apache-2.0
#include "cvm/dataio/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "cvm/core/error.hpp"

namespace cvm::io {

using nlohmann::json;

namespace {

// Reads keys of one JSON object, remembering which were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (!matches(v, out)) throw ConfigError("config: '" + where(key) + "' has the wrong type");
    out = v.get<T>();
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (v.is_null()) {
      out.reset();
      return;
    }
    T tmp{};
    if (!matches(v, tmp)) throw ConfigError("config: '" + where(key) + "' has the wrong type");
    out = v.get<T>();
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + where(k) + "'");
  }

 private:
  static bool matches(const json& v, const bool&) { return v.is_boolean(); }
  static bool matches(const json& v, const std::string&) { return v.is_string(); }
  static bool matches(const json& v, const double&) { return v.is_number(); }
  static bool matches(const json& v, const std::int64_t&) { return v.is_number_integer(); }
  static bool matches(const json& v, const std::uint64_t&) { return v.is_number_unsigned(); }
  template <class T>
  static bool matches(const json& v, const std::vector<T>&) {
    if (!v.is_array()) return false;
    T probe{};
    for (const auto& e : v)
      if (!matches(e, probe)) return false;
    return true;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string reduction_name(costvol::DepthReduction r) {
  return r == costvol::DepthReduction::PerDepth ? "per-depth" : "collapsed";
}

costvol::DepthReduction reduction_from(const std::string& s) {
  if (s == "per-depth") return costvol::DepthReduction::PerDepth;
  if (s == "collapsed") return costvol::DepthReduction::Collapsed;
  throw ConfigError("config: cvm.reduction must be 'per-depth' or 'collapsed', got '" + s + "'");
}

std::string layout_name(synth::Layout l) { return l == synth::Layout::Room ? "room" : "fronto-plane"; }

synth::Layout layout_from(const std::string& s) {
  if (s == "room") return synth::Layout::Room;
  if (s == "fronto-plane") return synth::Layout::FrontoPlane;
  throw ConfigError("config: synth.layout must be 'room' or 'fronto-plane', got '" + s + "'");
}

}  // namespace

std::vector<double> MetricsConfig::threshold_values() const {
  std::vector<double> t;
  for (std::int64_t k = 1; k <= thresholds; ++k) t.push_back(static_cast<double>(k) / static_cast<double>(thresholds + 1));
  return t;
}

std::uint64_t SynthConfig::scene_seed(const std::string& split, std::int64_t k) const {
  std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL + fnv1a64(split);
  return s ^ (static_cast<std::uint64_t>(k) * 0xBF58476D1CE4E5B9ULL);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void RunConfig::validate() const {
  model.validate();
  training.validate();
  if (metrics.thresholds < 1) throw ConfigError("config: metrics.thresholds must be >= 1");
  if (!(metrics.boundary_tolerance_fraction > 0)) throw ConfigError("config: boundary tolerance must be positive");
  if (metrics.boundary_tolerance_px && !(*metrics.boundary_tolerance_px >= 0))
    throw ConfigError("config: boundary_tolerance_px must be nonnegative");
  if (!(metrics.saliency_beta_sq > 0)) throw ConfigError("config: saliency_beta_sq must be positive");
  synth.scene.validate();
  if (synth.train_scenes < 0 || synth.test_scenes < 0 || synth.video_scenes < 0)
    throw ConfigError("config: scene counts must be nonnegative");
  if (synth.video_frames < 1) throw ConfigError("config: synth.video_frames must be >= 1");
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(*this).dump())));
  return buf;
}

json model_to_json(const mtl::ModelConfig& m) {
  json tasks = json::array();
  for (const auto& t : m.tasks) {
    json jt = {{"name", t.name}, {"weight", t.loss_weight}};
    if (t.num_classes > 0) jt["num_classes"] = t.num_classes;
    tasks.push_back(jt);
  }
  const auto& c = m.cvm;
  return {{"model",
           {{"encoder",
             {{"kind", m.encoder.kind},
              {"channels", m.encoder.channels},
              {"strides", m.encoder.strides},
              {"taps", m.encoder.tap_layers}}},
            {"tasks", tasks},
            {"head_hidden", m.head_hidden},
            {"fusion", mtl::to_string(m.fusion)}}},
          {"cvm",
           {{"block_channels", c.encoder.block_channels},
            {"layers", c.transformer.layers},
            {"window_size", c.transformer.window_size},
            {"heads", c.transformer.heads},
            {"neighbor_limit", c.transformer.neighbor_limit},
            {"ffn_expansion", c.transformer.ffn_expansion},
            {"adapter_expansion", c.transformer.adapter_expansion},
            {"shifted_windows", c.transformer.shifted_windows},
            {"reduction", reduction_name(c.reduction)},
            {"upsample_factor", c.upsample_factor}}},
          {"geometry", {{"depth_candidates", c.depth_candidates}, {"d_min", c.d_min}, {"d_max", c.d_max}}}};
}

json to_json(const RunConfig& cfg) {
  json j = model_to_json(cfg.model);
  const auto& t = cfg.training;
  j["training"] = {{"steps", t.steps},
                   {"batch_size", t.batch_size},
                   {"lr", t.lr},
                   {"weight_decay", t.weight_decay},
                   {"beta1", t.beta1},
                   {"beta2", t.beta2},
                   {"eps", t.eps},
                   {"power", t.power},
                   {"min_lr_ratio", t.min_lr_ratio},
                   {"seed", t.seed},
                   {"views", t.views},
                   {"duplicate_single_view", t.duplicate_single_view},
                   {"supervise_duplicate", t.supervise_duplicate},
                   {"checkpoint_every", t.checkpoint_every}};
  const auto& m = cfg.metrics;
  j["metrics"] = {{"boundary_tolerance_fraction", m.boundary_tolerance_fraction},
                  {"boundary_tolerance_px", m.boundary_tolerance_px ? json(*m.boundary_tolerance_px) : json(nullptr)},
                  {"thresholds", m.thresholds},
                  {"saliency_beta_sq", m.saliency_beta_sq}};
  const auto& s = cfg.synth;
  const auto& sc = s.scene;
  j["synth"] = {{"seed", s.seed},
                {"train_scenes", s.train_scenes},
                {"test_scenes", s.test_scenes},
                {"video_scenes", s.video_scenes},
                {"video_frames", s.video_frames},
                {"layout", layout_name(sc.layout)},
                {"width", sc.width},
                {"height", sc.height},
                {"views", sc.views},
                {"num_classes", sc.num_classes},
                {"boxes", sc.boxes},
                {"d_min", sc.d_min},
                {"d_max", sc.d_max},
                {"baseline_min", sc.baseline_min},
                {"baseline_max", sc.baseline_max},
                {"focal_fraction", sc.focal_fraction},
                {"texture_freq_min", sc.texture_freq_min},
                {"texture_freq_max", sc.texture_freq_max}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  Section root(j, "");
  if (const json* jm = root.sub("model")) {
    Section s(*jm, "model");
    if (const json* je = s.sub("encoder")) {
      Section e(*je, "model.encoder");
      e.get("kind", cfg.model.encoder.kind);
      e.get("channels", cfg.model.encoder.channels);
      e.get("strides", cfg.model.encoder.strides);
      e.get("taps", cfg.model.encoder.tap_layers);
      e.finish();
    }
    if (const json* jt = s.sub("tasks")) {
      if (!jt->is_array()) throw ConfigError("config: 'model.tasks' must be an array");
      cfg.model.tasks.clear();
      for (std::size_t i = 0; i < jt->size(); ++i) {
        Section t((*jt)[i], "model.tasks[" + std::to_string(i) + "]");
        std::string name;
        double weight = 1.0;
        std::int64_t classes = 0;
        t.get("name", name);
        t.get("weight", weight);
        t.get("num_classes", classes);
        t.finish();
        if (name.empty()) throw ConfigError("config: model.tasks[" + std::to_string(i) + "] needs a name");
        cfg.model.tasks.push_back(mtl::make_task(name, classes, weight));
      }
    }
    s.get("head_hidden", cfg.model.head_hidden);
    std::string fusion = mtl::to_string(cfg.model.fusion);
    s.get("fusion", fusion);
    cfg.model.fusion = mtl::fusion_mode_from_string(fusion);
    s.finish();
  }
  auto& cvm = cfg.model.cvm;
  if (const json* jc = root.sub("cvm")) {
    Section s(*jc, "cvm");
    s.get("block_channels", cvm.encoder.block_channels);
    s.get("layers", cvm.transformer.layers);
    s.get("window_size", cvm.transformer.window_size);
    s.get("heads", cvm.transformer.heads);
    s.get("neighbor_limit", cvm.transformer.neighbor_limit);
    s.get("ffn_expansion", cvm.transformer.ffn_expansion);
    s.get("adapter_expansion", cvm.transformer.adapter_expansion);
    s.get("shifted_windows", cvm.transformer.shifted_windows);
    std::string red = reduction_name(cvm.reduction);
    s.get("reduction", red);
    cvm.reduction = reduction_from(red);
    s.get("upsample_factor", cvm.upsample_factor);
    s.finish();
  }
  if (cvm.encoder.block_channels.empty()) throw ConfigError("config: cvm.block_channels must be nonempty");
  cvm.encoder.downsample_factor = std::int64_t{1} << cvm.encoder.block_channels.size();
  cvm.transformer.channels = cvm.encoder.out_channels();
  if (const json* jg = root.sub("geometry")) {
    Section s(*jg, "geometry");
    s.get("depth_candidates", cvm.depth_candidates);
    s.get("d_min", cvm.d_min);
    s.get("d_max", cvm.d_max);
    s.finish();
  }
  if (const json* jt = root.sub("training")) {
    Section s(*jt, "training");
    auto& t = cfg.training;
    s.get("steps", t.steps);
    s.get("batch_size", t.batch_size);
    s.get("lr", t.lr);
    s.get("weight_decay", t.weight_decay);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("eps", t.eps);
    s.get("power", t.power);
    s.get("min_lr_ratio", t.min_lr_ratio);
    s.get("seed", t.seed);
    s.get("views", t.views);
    s.get("duplicate_single_view", t.duplicate_single_view);
    s.get("supervise_duplicate", t.supervise_duplicate);
    s.get("checkpoint_every", t.checkpoint_every);
    s.finish();
  }
  if (const json* jm = root.sub("metrics")) {
    Section s(*jm, "metrics");
    auto& m = cfg.metrics;
    s.get("boundary_tolerance_fraction", m.boundary_tolerance_fraction);
    s.get("boundary_tolerance_px", m.boundary_tolerance_px);
    s.get("thresholds", m.thresholds);
    s.get("saliency_beta_sq", m.saliency_beta_sq);
    s.finish();
  }
  if (const json* js = root.sub("synth")) {
    Section s(*js, "synth");
    auto& sy = cfg.synth;
    auto& sc = sy.scene;
    s.get("seed", sy.seed);
    s.get("train_scenes", sy.train_scenes);
    s.get("test_scenes", sy.test_scenes);
    s.get("video_scenes", sy.video_scenes);
    s.get("video_frames", sy.video_frames);
    std::string layout = layout_name(sc.layout);
    s.get("layout", layout);
    sc.layout = layout_from(layout);
    s.get("width", sc.width);
    s.get("height", sc.height);
    s.get("views", sc.views);
    s.get("num_classes", sc.num_classes);
    s.get("boxes", sc.boxes);
    s.get("d_min", sc.d_min);
    s.get("d_max", sc.d_max);
    s.get("baseline_min", sc.baseline_min);
    s.get("baseline_max", sc.baseline_max);
    s.get("focal_fraction", sc.focal_fraction);
    s.get("texture_freq_min", sc.texture_freq_min);
    s.get("texture_freq_max", sc.texture_freq_max);
    s.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write config " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

}  // namespace cvm::io
