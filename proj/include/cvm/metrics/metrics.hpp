// SPDX-License-Identifier: Apache-2.0
//
// Dense-prediction evaluation metrics. All accumulators sum dataset-level
// counts across add() calls; a metric with nothing to measure is reported as
// std::nullopt rather than NaN.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cvm::metrics {

/// k/34 for k = 1..33.
std::vector<double> default_thresholds();

class SegmentationAccumulator {
 public:
  SegmentationAccumulator(std::int32_t num_classes, std::int32_t ignore_label = 255);
  /// Throws DataError for labels >= num_classes other than ignore_label.
  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt);
  /// Mean IoU (percent) over classes that occur in the ground truth.
  std::optional<double> miou() const;
  const std::vector<std::int64_t>& confusion() const { return confusion_; }  // [gt * K + pred]

 private:
  std::int32_t k_, ignore_;
  std::vector<std::int64_t> confusion_;
};

class DepthAccumulator {
 public:
  void add(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> valid);
  std::optional<double> rmse() const;
  std::int64_t count() const { return n_; }

 private:
  double sq_ = 0;
  std::int64_t n_ = 0;
};

class NormalAccumulator {
 public:
  /// pred, gt are [3,H*W] planar. Vectors are re-normalised; a zero-length
  /// vector on either side makes the pixel invalid.
  void add(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> valid);
  std::optional<double> mean_error_deg() const;
  std::int64_t invalid() const { return invalid_; }

 private:
  double sum_deg_ = 0;
  std::int64_t n_ = 0, invalid_ = 0;
};

struct BoundaryOptions {
  std::vector<double> thresholds = default_thresholds();
  /// Match radius as a fraction of the image diagonal, unless tolerance_px is set.
  double tolerance_fraction = 0.011;
  std::optional<double> tolerance_px;
};

/// odsF: per threshold, predicted boundary pixels (prob >= t) are matched
/// one-to-one against ground-truth pixels within the radius. Predictions are
/// visited in raster order and take the nearest unmatched ground-truth pixel,
/// ties going to the earlier one in raster order.
class BoundaryAccumulator {
 public:
  explicit BoundaryAccumulator(BoundaryOptions opt = {});
  void add(std::span<const double> prob, std::span<const std::uint8_t> gt, std::int64_t height, std::int64_t width);
  /// Best dataset-wide F over thresholds, percent; nullopt without any GT boundary.
  std::optional<double> ods_f() const;
  std::optional<double> best_threshold() const;

 private:
  BoundaryOptions opt_;
  std::vector<std::int64_t> matched_, predicted_;
  std::int64_t gt_total_ = 0;
};

/// Greedy matching for one map at one threshold; returns the matched count.
std::int64_t match_boundaries(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::int64_t height,
                              std::int64_t width, double radius);

class SaliencyAccumulator {
 public:
  explicit SaliencyAccumulator(std::vector<double> thresholds = default_thresholds(), double beta_sq = 0.3);
  void add(std::span<const double> prob, std::span<const std::uint8_t> gt);
  std::optional<double> max_f() const;

 private:
  std::vector<double> thresholds_;
  double beta_sq_;
  std::vector<std::int64_t> tp_, fp_, fn_;
  std::int64_t seen_ = 0;
};

std::optional<double> miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                           std::int32_t num_classes, std::int32_t ignore_label = 255);
std::optional<double> depth_rmse(std::span<const double> pred, std::span<const double> gt,
                                 std::span<const std::uint8_t> valid);
std::optional<double> normal_merr(std::span<const double> pred, std::span<const double> gt,
                                  std::span<const std::uint8_t> valid);
std::optional<double> boundary_odsf(const std::vector<std::vector<double>>& probs,
                                    const std::vector<std::vector<std::uint8_t>>& gts, std::int64_t height,
                                    std::int64_t width, const BoundaryOptions& opt = {});
std::optional<double> saliency_maxf(const std::vector<std::vector<double>>& probs,
                                    const std::vector<std::vector<std::uint8_t>>& gts,
                                    const std::vector<double>& thresholds = default_thresholds(), double beta_sq = 0.3);

struct TaskMetric {
  std::string task;    // e.g. "segmentation"
  std::string metric;  // e.g. "mIoU"
  std::optional<double> value;
  bool higher_is_better = true;
};

struct MetricReport {
  std::string name;
  std::vector<TaskMetric> tasks;
  std::optional<std::string> baseline;
  std::optional<double> delta_mtl;

  const TaskMetric* find(const std::string& task) const;
};

/// (100/T) * sum_t s_t (M_t - B_t) / B_t with s_t = -1 for lower-is-better
/// tasks. Task sets must match by name.
double delta_mtl(const MetricReport& model, const MetricReport& baseline);

nlohmann::json to_json(const MetricReport& r);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace cvm::metrics
