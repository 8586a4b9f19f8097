// SPDX-License-Identifier: Apache-2.0
#include "cvm/mtl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "cvm/core/error.hpp"

namespace cvm::mtl {

using ad::Tensor;
using nlohmann::json;

io::Sample prepare_sample(const io::Sample& s, const TrainConfig& cfg) {
  if (s.views.empty()) throw DataError("sample " + s.id + " has no views");
  if (s.views.size() == 1) {
    if (!cfg.duplicate_single_view) return s;
    io::Sample d = duplicate_view(s);
    if (cfg.supervise_duplicate) d.views[1].labelled = true;
    return d;
  }
  io::Sample out = s;
  if (static_cast<std::int64_t>(out.views.size()) > cfg.views && cfg.views >= 2)
    out.views.resize(static_cast<std::size_t>(cfg.views));
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".json");
  return p;
}

void save_model(const std::filesystem::path& checkpoint, const ad::ParamStore& params, const io::RunConfig& cfg,
                std::int64_t step) {
  params.save(checkpoint);
  json tasks = json::array();
  for (const auto& t : cfg.model.tasks) tasks.push_back(t.name);
  json meta = {{"config_hash", cfg.hash()},
               {"seed", cfg.training.seed},
               {"step", step},
               {"tasks", tasks},
               {"config", io::to_json(cfg)}};
  std::ofstream os(sidecar_path(checkpoint), std::ios::trunc);
  if (!os) throw IoError("cannot write " + sidecar_path(checkpoint).string());
  os << meta.dump(2) << '\n';
}

LoadedModel load_model(const std::filesystem::path& checkpoint, const std::optional<io::RunConfig>& expected) {
  std::ifstream is(sidecar_path(checkpoint));
  if (!is) throw LoadError("missing checkpoint metadata " + sidecar_path(checkpoint).string());
  LoadedModel m;
  try {
    const json meta = json::parse(is);
    m.config = io::run_config_from_json(meta.at("config"));
    m.config_hash = meta.at("config_hash").get<std::string>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.step = meta.at("step").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw LoadError("malformed checkpoint metadata " + sidecar_path(checkpoint).string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint metadata holds an invalid config: " + std::string(e.what()));
  }
  if (m.config.hash() != m.config_hash)
    throw LoadError("checkpoint metadata is inconsistent: config hash " + m.config_hash + " recorded, " +
                    m.config.hash() + " computed");
  if (expected && expected->hash() != m.config_hash)
    throw LoadError("checkpoint was trained with config " + m.config_hash + ", not " + expected->hash());
  Rng rng(m.seed);
  m.model = MtlModel::create(m.params, m.config.model, rng);
  m.params.load(checkpoint);
  return m;
}

TrainOutcome train(const std::vector<io::Sample>& data, const io::RunConfig& cfg, const std::filesystem::path& out_dir,
                   const std::function<void(const TraceRow&)>& progress) {
  cfg.validate();
  if (data.empty()) throw ContractError("training needs at least one sample");
  const auto& tc = cfg.training;
  std::vector<io::Sample> prepared;
  for (const auto& s : data) {
    prepared.push_back(prepare_sample(s, tc));
    if (prepared.back().views.size() < 2 && cfg.model.fusion != FusionMode::NoCvm)
      throw ContractError("sample " + s.id + " has one view; enable duplicate_single_view or train without the CvM");
  }

  std::filesystem::create_directories(out_dir);
  TrainOutcome out;
  out.checkpoint = out_dir / "model.ckpt";
  out.sidecar = sidecar_path(out.checkpoint);
  out.trace_csv = out_dir / "trace.csv";
  std::ofstream csv(out.trace_csv, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + out.trace_csv.string());
  csv << "step,total_loss";
  for (const auto& t : cfg.model.tasks) csv << ',' << t.name;
  csv << '\n' << std::setprecision(17);

  ad::ParamStore ps;
  Rng init(tc.seed);
  const MtlModel model = MtlModel::create(ps, cfg.model, init);
  AdamW opt(ps, tc);
  Rng order(tc.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> perm(prepared.size());
  std::size_t cursor = perm.size();

  for (std::int64_t step = 0; step < tc.steps; ++step) {
    ps.zero_grad();
    TraceRow row;
    row.step = step;
    row.lr = polynomial_lr(tc, step);
    Tensor total;
    for (std::int64_t b = 0; b < tc.batch_size; ++b) {
      if (cursor == perm.size()) {
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[order.below(i)]);
        cursor = 0;
      }
      const io::Sample& s = prepared[perm[cursor++]];
      LossBreakdown lb;
      try {
        const auto fr = model.forward(stack_images(s), cameras_of(s));
        lb = multi_task_loss(fr.preds, s, cfg.model.tasks, tc.supervise_duplicate);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": " + e.what());
      }
      for (const auto& [k, v] : lb.per_task) row.per_task[k] += v / static_cast<double>(tc.batch_size);
      total = total.defined() ? ad::add(total, lb.total) : lb.total;
    }
    total = ad::scale(total, 1.0 / static_cast<double>(tc.batch_size));
    row.total = total.item();
    if (!std::isfinite(row.total)) throw NumericError("step " + std::to_string(step) + ": total loss is not finite");
    ad::backward(total);
    try {
      opt.step(row.lr);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    csv << step << ',' << row.total;
    for (const auto& t : cfg.model.tasks) {
      const auto it = row.per_task.find(t.name);
      csv << ',';
      if (it != row.per_task.end()) csv << it->second;
    }
    csv << '\n';
    if (progress) progress(row);
    out.trace.push_back(std::move(row));
    if (tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 && step + 1 < tc.steps)
      save_model(out_dir / ("model_step" + std::to_string(step + 1) + ".ckpt"), ps, cfg, step + 1);
  }
  csv.flush();
  save_model(out.checkpoint, ps, cfg, tc.steps);
  return out;
}

std::string metric_name(const std::string& task) {
  if (task == "segmentation" || task == "parts") return "mIoU";
  if (task == "depth") return "RMSE";
  if (task == "normal") return "mErr";
  if (task == "boundary") return "odsF";
  if (task == "saliency") return "maxF";
  throw ConfigError("unknown task '" + task + "'");
}

namespace {

std::vector<double> view_slice(const Tensor& t, std::int64_t v) {
  const std::int64_t per = t.numel() / t.dim(0);
  const auto d = t.data();
  return {d.begin() + v * per, d.begin() + (v + 1) * per};
}

}  // namespace

Evaluator::Evaluator(const io::RunConfig& cfg)
    : cfg_(cfg),
      boundary_(boundary_options(cfg)),
      saliency_(cfg.metrics.threshold_values(), cfg.metrics.saliency_beta_sq) {
  for (const auto& t : cfg.model.tasks)
    if (t.num_classes > 0) seg_.emplace(t.name, metrics::SegmentationAccumulator(static_cast<std::int32_t>(t.num_classes)));
}

metrics::BoundaryOptions Evaluator::boundary_options(const io::RunConfig& cfg) {
  metrics::BoundaryOptions bopt;
  bopt.thresholds = cfg.metrics.threshold_values();
  bopt.tolerance_fraction = cfg.metrics.boundary_tolerance_fraction;
  bopt.tolerance_px = cfg.metrics.boundary_tolerance_px;
  return bopt;
}

void Evaluator::add(const io::Sample& s, const std::map<std::string, Tensor>& preds) {
  const std::int64_t p = s.height * s.width;
  for (std::size_t vi = 0; vi < s.views.size(); ++vi) {
    const auto& view = s.views[vi];
    if (!view.labelled) continue;
    const auto v = static_cast<std::int64_t>(vi);
    for (const auto& t : cfg_.model.tasks) {
      if (!s.has_task(t.name)) continue;
      const auto it = preds.find(t.name);
      if (it == preds.end()) throw ContractError("no prediction for task '" + t.name + "'");
      const auto pred = view_slice(it->second, v);
      if (t.name == "segmentation" || t.name == "parts") {
        std::vector<std::int32_t> cls(static_cast<std::size_t>(p), 0);
        for (std::int64_t q = 0; q < p; ++q) {
          std::int64_t best = 0;
          for (std::int64_t k = 1; k < t.num_classes; ++k)
            if (pred[k * p + q] > pred[best * p + q]) best = k;
          cls[q] = static_cast<std::int32_t>(best);
        }
        seg_.at(t.name).add(cls, view.segmentation);
      } else if (t.name == "depth") {
        std::vector<std::uint8_t> valid(static_cast<std::size_t>(p));
        for (std::int64_t q = 0; q < p; ++q) valid[q] = view.depth[q] > 0;
        depth_.add(pred, view.depth, valid);
      } else if (t.name == "normal") {
        std::vector<std::uint8_t> valid(static_cast<std::size_t>(p));
        for (std::int64_t q = 0; q < p; ++q)
          valid[q] = view.normal[q] * view.normal[q] + view.normal[p + q] * view.normal[p + q] +
                         view.normal[2 * p + q] * view.normal[2 * p + q] >
                     0.25;
        normal_.add(pred, view.normal, valid);
      } else {
        std::vector<double> prob(pred.size());
        for (std::size_t q = 0; q < prob.size(); ++q) prob[q] = 1.0 / (1.0 + std::exp(-pred[q]));
        if (t.name == "boundary") {
          boundary_.add(prob, view.boundary, s.height, s.width);
        } else {
          saliency_.add(prob, view.boundary);
        }
      }
    }
  }
}

metrics::MetricReport Evaluator::report(const std::string& name) const {
  metrics::MetricReport r;
  r.name = name;
  for (const auto& t : cfg_.model.tasks) {
    metrics::TaskMetric tm{t.name, metric_name(t.name), std::nullopt, t.higher_is_better};
    if (t.name == "segmentation" || t.name == "parts") tm.value = seg_.at(t.name).miou();
    if (t.name == "depth") tm.value = depth_.rmse();
    if (t.name == "normal") tm.value = normal_.mean_error_deg();
    if (t.name == "boundary") tm.value = boundary_.ods_f();
    if (t.name == "saliency") tm.value = saliency_.max_f();
    r.tasks.push_back(tm);
  }
  return r;
}

metrics::MetricReport evaluate(const LoadedModel& m, const std::vector<io::Sample>& data, const std::string& name,
                               std::optional<FusionMode> mode) {
  const FusionMode fm = mode.value_or(m.config.model.fusion);
  Evaluator ev(m.config);
  ad::NoGradGuard guard;
  for (const auto& raw : data) {
    const io::Sample s = prepare_sample(raw, m.config.training);
    ev.add(s, m.model.forward(stack_images(s), cameras_of(s), fm).preds);
  }
  return ev.report(name);
}

geo::Camera nominal_camera(std::int64_t h, std::int64_t w) {
  geo::CameraIntrinsics k;
  k.fx = k.fy = static_cast<double>(w);
  k.cx = 0.5 * static_cast<double>(w - 1);
  k.cy = 0.5 * static_cast<double>(h - 1);
  k.width = w;
  k.height = h;
  return {k, geo::RigidPose::identity()};
}

std::map<std::string, Tensor> infer(const LoadedModel& m, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("infer expects an image [3,H,W], got " + ad::shape_str(image.shape()));
  io::Sample s;
  s.id = "infer";
  s.height = image.dim(1);
  s.width = image.dim(2);
  io::SampleView v;
  v.camera = nominal_camera(s.height, s.width);
  v.image.assign(image.data().begin(), image.data().end());
  s.views.push_back(std::move(v));
  s = duplicate_view(s);
  ad::NoGradGuard guard;
  const auto fr = m.model.forward(stack_images(s), cameras_of(s));
  std::map<std::string, Tensor> out;
  for (const auto& [task, t] : fr.preds)
    out[task] = Tensor::from({t.dim(1), t.dim(2), t.dim(3)}, view_slice(t, 0));
  return out;
}

}  // namespace cvm::mtl
