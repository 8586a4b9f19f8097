// SPDX-License-Identifier: Apache-2.0
//
// Training, evaluation and inference around MtlModel.
//
// A trained model is stored as two files side by side: <stem>.ckpt (the
// parameter container) and <stem>.json (config hash, seed, step, tasks and
// the full run config). Training also appends one CSV row per step to
// trace.csv: step,total_loss,<task losses in config order>.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cvm/dataio/config.hpp"
#include "cvm/metrics/metrics.hpp"
#include "cvm/mtl/model.hpp"

namespace cvm::mtl {

/// Shape a record for the model: single views are duplicated (when allowed)
/// and samples with more than `views` views keep the first ones.
io::Sample prepare_sample(const io::Sample& s, const TrainConfig& cfg);

struct TraceRow {
  std::int64_t step = 0;
  double total = 0;
  double lr = 0;
  std::map<std::string, double> per_task;
};

struct TrainOutcome {
  std::vector<TraceRow> trace;
  std::filesystem::path checkpoint, sidecar, trace_csv;
};

/// Throws ContractError for an empty dataset and NumericError (with the step
/// index) when the loss stops being finite.
TrainOutcome train(const std::vector<io::Sample>& data, const io::RunConfig& cfg, const std::filesystem::path& out_dir,
                   const std::function<void(const TraceRow&)>& progress = {});

struct LoadedModel {
  io::RunConfig config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  ad::ParamStore params;
  MtlModel model;
};

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

void save_model(const std::filesystem::path& checkpoint, const ad::ParamStore& params, const io::RunConfig& cfg,
                std::int64_t step);
/// Rebuilds the model from the sidecar and loads the parameters. Throws
/// LoadError when the container does not match the model, or when `expected`
/// is given and its hash differs from the recorded one.
LoadedModel load_model(const std::filesystem::path& checkpoint, const std::optional<io::RunConfig>& expected = {});

/// Metric name reported for a task (mIoU, RMSE, mErr, odsF, maxF).
std::string metric_name(const std::string& task);

/// Accumulates metrics over the labelled views of samples. Predictions are
/// per task [V,C,H,W] as the model returns them: logits for segmentation,
/// boundary and saliency, metres for depth, unit vectors for normals.
class Evaluator {
 public:
  explicit Evaluator(const io::RunConfig& cfg);
  void add(const io::Sample& s, const std::map<std::string, ad::Tensor>& preds);
  metrics::MetricReport report(const std::string& name) const;

 private:
  static metrics::BoundaryOptions boundary_options(const io::RunConfig& cfg);

  io::RunConfig cfg_;
  std::map<std::string, metrics::SegmentationAccumulator> seg_;
  metrics::DepthAccumulator depth_;
  metrics::NormalAccumulator normal_;
  metrics::BoundaryAccumulator boundary_;
  metrics::SaliencyAccumulator saliency_;
};

/// Metrics over every labelled view of every sample.
metrics::MetricReport evaluate(const LoadedModel& m, const std::vector<io::Sample>& data, const std::string& name,
                               std::optional<FusionMode> mode = {});

/// Predictions for one image [3,H,W] (duplicated internally), per task [C,H,W].
std::map<std::string, ad::Tensor> infer(const LoadedModel& m, const ad::Tensor& image);

/// Nominal pinhole camera for an image with unknown calibration.
geo::Camera nominal_camera(std::int64_t h, std::int64_t w);

}  // namespace cvm::mtl
