// SPDX-License-Identifier: Apache-2.0
#include "cvm/cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cvm/core/error.hpp"
#include "cvm/dataio/config.hpp"
#include "cvm/dataio/image_io.hpp"
#include "cvm/dataio/manifest.hpp"
#include "cvm/kernels/kernels.hpp"
#include "cvm/metrics/metrics.hpp"
#include "cvm/mtl/pipeline.hpp"
#include "cvm/synth/synth.hpp"

namespace cvm::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kNumericFailure;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const IoError*>(&e) || dynamic_cast<const LoadError*>(&e) ||
      dynamic_cast<const UnsupportedModelError*>(&e))
    return kDataError;
  return kUsage;
}

namespace {

io::RunConfig config_or_default(const std::optional<fs::path>& p) {
  return p ? io::load_run_config(*p) : io::RunConfig{};
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os << s;
  if (!os) throw IoError("failed writing " + p.string());
}

std::vector<io::Sample> load_split(const fs::path& manifest, const std::string& split) {
  const auto m = io::read_manifest(manifest);
  std::vector<io::Sample> out;
  for (const auto* r : m.split(split)) out.push_back(io::load_sample(m, *r));
  if (out.empty()) throw DataError(manifest.string() + ": no records in split '" + split + "'");
  return out;
}

std::string scene_id(const std::string& split, std::int64_t k) {
  std::ostringstream os;
  os << split << "_" << std::setw(4) << std::setfill('0') << k;
  return os.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

CommandOutcome cmd_synth(const SynthOptions& o) {
  auto cfg = config_or_default(o.config);
  if (o.seed) cfg.synth.seed = *o.seed;
  cfg.validate();
  if (fs::exists(o.out) && !fs::is_directory(o.out)) throw ConfigError(o.out.string() + " is not a directory");
  if (fs::exists(o.out) && !fs::is_empty(o.out) && !o.force)
    throw ConfigError(o.out.string() + " is not empty (use --force to overwrite)");
  fs::create_directories(o.out);

  struct Split {
    std::string name;
    std::int64_t count;
    bool video;
  };
  const std::vector<Split> splits{{"train", cfg.synth.train_scenes, false},
                                  {"test", cfg.synth.test_scenes, false},
                                  {"video", cfg.synth.video_scenes, true}};
  std::vector<io::SampleRecord> records;
  for (const auto& sp : splits)
    for (std::int64_t k = 0; k < sp.count; ++k) {
      synth::SceneSpec spec = cfg.synth.scene;
      spec.seed = cfg.synth.scene_seed(sp.name, k);
      if (sp.video) {
        spec.video = true;
        spec.views = cfg.synth.video_frames;
      }
      synth::RenderedSample rs;
      try {
        rs = synth::generate(spec);
      } catch (const DataError& e) {
        throw DataError(sp.name + " scene " + std::to_string(k) + " (seed " + std::to_string(spec.seed) +
                        "): " + e.what());
      }
      const auto id = scene_id(sp.name, k);
      records.push_back(io::save_rendered(rs, o.out, id, sp.name));
    }
  CommandOutcome r;
  r.artifacts = {o.out / "manifest.jsonl", o.out / "config.json"};
  io::write_manifest(r.artifacts[0], records);
  io::save_run_config(r.artifacts[1], cfg);
  r.summary = "wrote " + std::to_string(records.size()) + " scenes to " + o.out.string();
  return r;
}

CommandOutcome cmd_train(const TrainOptions& o, std::ostream& log) {
  auto base = config_or_default(o.config);
  if (o.ablation) base.model.fusion = mtl::fusion_mode_from_string(*o.ablation);
  if (o.views) base.training.views = *o.views;
  if (o.steps) base.training.steps = *o.steps;
  if (o.seed) base.training.seed = *o.seed;
  std::vector<std::int64_t> sweep = o.depth_candidates;
  if (sweep.empty()) sweep.push_back(base.model.cvm.depth_candidates);
  std::vector<io::RunConfig> runs;
  for (auto l : sweep) {
    auto c = base;
    c.model.cvm.depth_candidates = l;
    c.validate();
    runs.push_back(c);
  }
  const auto data = load_split(o.manifest, o.split);

  CommandOutcome r;
  std::ostringstream summary;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const fs::path dir = sweep.size() > 1 ? o.out / ("L" + std::to_string(sweep[i])) : o.out;
    const auto& cfg = runs[i];
    const std::int64_t every = std::max<std::int64_t>(1, cfg.training.steps / 10);
    const auto out = mtl::train(data, cfg, dir, [&](const mtl::TraceRow& row) {
      if ((row.step + 1) % every == 0 || row.step == 0)
        log << dir.filename().string() << " step " << row.step + 1 << "/" << cfg.training.steps
            << " loss " << fixed(row.total, 5) << "\n";
    });
    r.artifacts.insert(r.artifacts.end(), {out.checkpoint, out.sidecar, out.trace_csv});
    summary << (i ? "\n" : "") << "trained " << dir.string() << " (" << mtl::to_string(cfg.model.fusion) << ", L="
            << cfg.model.cvm.depth_candidates << ", " << cfg.training.steps << " steps, final loss "
            << fixed(out.trace.back().total, 5) << ")";
  }
  r.summary = summary.str();
  return r;
}

CommandOutcome cmd_eval(const EvalOptions& o) {
  if (o.checkpoints.empty()) throw ConfigError("eval needs at least one --checkpoint");
  if (o.name && o.checkpoints.size() > 1) throw ConfigError("--name applies to a single checkpoint");
  const auto data = load_split(o.manifest, o.split);
  fs::create_directories(o.out);
  CommandOutcome r;
  std::ostringstream summary;
  for (const auto& ck : o.checkpoints) {
    const auto m = mtl::load_model(ck);
    std::optional<mtl::FusionMode> mode;
    if (o.ablation) mode = mtl::fusion_mode_from_string(*o.ablation);
    const std::string name = o.name.value_or(ck.parent_path().filename().string());
    const auto rep = mtl::evaluate(m, data, name.empty() ? "model" : name, mode);
    const auto path = o.out / (rep.name + ".json");
    write_text(path, metrics::to_json(rep).dump(2) + "\n");
    r.artifacts.push_back(path);
    summary << (r.artifacts.size() > 1 ? "\n" : "") << rep.name << ":";
    for (const auto& t : rep.tasks)
      summary << " " << t.metric << "=" << (t.value ? fixed(*t.value, 4) : std::string("n/a"));
  }
  r.summary = summary.str();
  return r;
}

CommandOutcome cmd_infer(const InferOptions& o) {
  const auto m = mtl::load_model(o.checkpoint);
  const auto image = io::load_image(o.image);
  const std::int64_t h = image.dim(1), w = image.dim(2), p = h * w;
  const auto preds = mtl::infer(m, image);
  fs::create_directories(o.out);
  CommandOutcome r;
  for (const auto& [task, t] : preds) {
    const auto d = t.data();
    const auto path = o.out / (task + ".png");
    if (task == "segmentation" || task == "parts") {
      const std::int64_t k = t.dim(0);
      std::vector<std::int32_t> cls(static_cast<std::size_t>(p), 0);
      for (std::int64_t q = 0; q < p; ++q)
        for (std::int64_t c = 1; c < k; ++c)
          if (d[c * p + q] > d[cls[q] * p + q]) cls[q] = static_cast<std::int32_t>(c);
      io::save_labels(path, cls, h, w);
    } else if (task == "depth") {
      io::FloatImage f{w, h, 1, std::vector<float>(d.begin(), d.end())};
      io::write_pfm(o.out / "depth.pfm", f);
      r.artifacts.push_back(o.out / "depth.pfm");
      io::RawImage mm{w, h, 1, 16, {}};
      for (double v : d) mm.data.push_back(static_cast<std::uint16_t>(std::clamp(std::lround(v * 1000.0), 0L, 65535L)));
      io::write_png(path, mm);  // millimetres
    } else if (task == "normal") {
      std::vector<double> rgb(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) rgb[i] = 0.5 * (d[i] + 1.0);
      io::save_image(path, rgb, h, w);
    } else {
      io::RawImage g{w, h, 1, 8, {}};
      for (double v : d) g.data.push_back(static_cast<std::uint16_t>(std::lround(255.0 / (1.0 + std::exp(-v)))));
      io::write_png(path, g);
    }
    r.artifacts.push_back(path);
  }
  r.summary = "wrote " + std::to_string(preds.size()) + " task maps to " + o.out.string();
  return r;
}

CommandOutcome cmd_report(const ReportOptions& o) {
  if (o.inputs.empty()) throw ConfigError("report needs at least one input report");
  std::vector<metrics::MetricReport> reps;
  for (const auto& p : o.inputs) {
    std::ifstream is(p);
    if (!is) throw IoError("cannot read " + p.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(p.string() + ": " + e.what());
    }
    reps.push_back(metrics::report_from_json(j));
  }
  const metrics::MetricReport* base = nullptr;
  for (std::size_t i = 0; i < reps.size(); ++i)
    if (reps[i].name == o.baseline || o.inputs[i] == fs::path(o.baseline)) base = &reps[i];
  if (!base) throw ConfigError("baseline '" + o.baseline + "' is not among the inputs");

  std::vector<std::string> header{"model"};
  for (const auto& t : base->tasks) header.push_back(t.task + " " + t.metric + (t.higher_is_better ? " (+)" : " (-)"));
  header.push_back("dMTL (%)");
  std::vector<std::vector<std::string>> rows;
  for (auto& rep : reps) {
    rep.baseline = base->name;
    rep.delta_mtl = metrics::delta_mtl(rep, *base);
    std::vector<std::string> row{rep.name};
    for (const auto& t : base->tasks) {
      const auto* m = rep.find(t.task);
      row.push_back(m && m->value ? fixed(*m->value, 4) : "n/a");
    }
    row.push_back(fixed(*rep.delta_mtl, 2));
    rows.push_back(row);
  }

  std::ostringstream csv, txt;
  const auto csv_cell = [](const std::string& s) {
    return s.find_first_of(",\"") == std::string::npos ? s : "\"" + s + "\"";
  };
  for (std::size_t c = 0; c < header.size(); ++c) csv << (c ? "," : "") << csv_cell(header[c]);
  csv << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) csv << (c ? "," : "") << csv_cell(row[c]);
    csv << "\n";
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) txt << "  ";
      if (c == 0)
        txt << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
      else
        txt << std::right << std::setw(static_cast<int>(width[c])) << cells[c];
    }
    txt << "\n";
  };
  line(header);
  std::size_t total = 0;
  for (auto wd : width) total += wd;
  txt << std::string(total + 2 * (width.size() - 1), '-') << "\n";
  for (const auto& row : rows) line(row);

  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  CommandOutcome r;
  r.artifacts = {fs::path(o.out.string() + ".csv"), fs::path(o.out.string() + ".txt")};
  write_text(r.artifacts[0], csv.str());
  write_text(r.artifacts[1], txt.str());
  r.summary = txt.str();
  return r;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-view multi-task learning toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for the numeric kernels")
      ->default_val(1)
      ->check(CLI::PositiveNumber);

  SynthOptions so;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Render a synthetic multi-view dataset and its manifest");
  synth->add_option("--config", so.config, "Run config JSON (synth section)")->check(CLI::ExistingFile);
  synth->add_option("--out", so.out, "Output directory")->required();
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "Override synth.seed");
  synth->add_flag("--force", so.force, "Write into a non-empty output directory");

  TrainOptions to;
  std::int64_t views = 0, steps = 0;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Train a model on a manifest split");
  train->add_option("--config", to.config, "Run config JSON")->check(CLI::ExistingFile);
  train->add_option("--manifest", to.manifest, "Dataset manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", to.out, "Run directory")->required();
  train->add_option("--split", to.split, "Manifest split to train on")->capture_default_str();
  train->add_option("--ablation", to.ablation, "Fusion mode")->check(CLI::IsMember({"full", "no-cf", "no-cvm"}));
  auto* views_opt = train->add_option("--views", views, "Views per sample")->check(CLI::PositiveNumber);
  auto* steps_opt = train->add_option("--steps", steps, "Override training.steps")->check(CLI::PositiveNumber);
  train->add_option("--depth-candidates", to.depth_candidates,
                    "Depth hypothesis count; several values train one run each under <out>/L<n>")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Override training.seed");

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints and write metric reports");
  eval->add_option("--checkpoint", eo.checkpoints, "Checkpoint (repeatable)")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", eo.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eo.out, "Directory for <name>.json reports")->required();
  eval->add_option("--split", eo.split, "Manifest split to evaluate")->capture_default_str();
  eval->add_option("--ablation", eo.ablation, "Fusion mode to evaluate under (must match the checkpoint)")
      ->check(CLI::IsMember({"full", "no-cf", "no-cvm"}));
  eval->add_option("--name", eo.name, "Report name (default: checkpoint directory name)");

  InferOptions io_;
  auto* infer = app.add_subcommand("infer", "Predict every task for one image");
  infer->add_option("--checkpoint", io_.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--image", io_.image, "Input PNG")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", io_.out, "Output directory")->required();

  ReportOptions ro;
  auto* report = app.add_subcommand("report", "Tabulate metric reports with dMTL against a baseline");
  report->add_option("inputs", ro.inputs, "Metric report JSON files")->required()->check(CLI::ExistingFile);
  report->add_option("--baseline", ro.baseline, "Baseline report name or path")->required();
  report->add_option("--out", ro.out, "Output stem for .csv and .txt")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }
  kernels::set_num_threads(threads);
  if (*synth_seed_opt) so.seed = synth_seed;
  if (*views_opt) to.views = views;
  if (*steps_opt) to.steps = steps;
  if (*train_seed_opt) to.seed = train_seed;

  try {
    CommandOutcome r;
    if (*synth) r = cmd_synth(so);
    else if (*train) r = cmd_train(to, out);
    else if (*eval) r = cmd_eval(eo);
    else if (*infer) r = cmd_infer(io_);
    else r = cmd_report(ro);
    out << r.summary << "\n";
    for (const auto& a : r.artifacts) out << "  " << a.string() << "\n";
    return r.exit_code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace cvm::cli
