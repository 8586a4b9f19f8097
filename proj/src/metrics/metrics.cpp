// SPDX-License-Identifier: Apache-2.0
#include "cvm/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cvm/core/error.hpp"

namespace cvm::metrics {

namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " values");
}

void check_thresholds(const std::vector<double>& t) {
  if (t.empty()) throw ConfigError("threshold list is empty");
}

}  // namespace

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 33; ++k) t.push_back(k / 34.0);
  return t;
}

// ---- segmentation ---------------------------------------------------------------

SegmentationAccumulator::SegmentationAccumulator(std::int32_t num_classes, std::int32_t ignore_label)
    : k_(num_classes), ignore_(ignore_label), confusion_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes <= 0) throw ConfigError("num_classes must be positive");
}

void SegmentationAccumulator::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt) {
  check_sizes(pred.size(), gt.size(), "miou");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = gt[i], p = pred[i];
    if (g == ignore_) continue;
    if (g < 0 || g >= k_) throw DataError("ground-truth label " + std::to_string(g) + " outside [0, " + std::to_string(k_) + ")");
    if (p < 0 || p >= k_) throw DataError("predicted label " + std::to_string(p) + " outside [0, " + std::to_string(k_) + ")");
    ++confusion_[static_cast<std::size_t>(g) * k_ + p];
  }
}

std::optional<double> SegmentationAccumulator::miou() const {
  double sum = 0;
  int present = 0;
  for (std::int32_t c = 0; c < k_; ++c) {
    std::int64_t tp = confusion_[c * k_ + c], gt_c = 0, pred_c = 0;
    for (std::int32_t o = 0; o < k_; ++o) {
      gt_c += confusion_[c * k_ + o];
      pred_c += confusion_[o * k_ + c];
    }
    if (gt_c == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(gt_c + pred_c - tp);
    ++present;
  }
  if (!present) return std::nullopt;
  return 100.0 * sum / present;
}

// ---- depth / normals -----------------------------------------------------------------

void DepthAccumulator::add(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> valid) {
  check_sizes(pred.size(), gt.size(), "depth_rmse");
  check_sizes(valid.size(), gt.size(), "depth_rmse mask");
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (valid[i]) {
      const double e = pred[i] - gt[i];
      sq_ += e * e;
      ++n_;
    }
}

std::optional<double> DepthAccumulator::rmse() const {
  if (!n_) return std::nullopt;
  return std::sqrt(sq_ / static_cast<double>(n_));
}

void NormalAccumulator::add(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> valid) {
  check_sizes(pred.size(), gt.size(), "normal_merr");
  check_sizes(3 * valid.size(), gt.size(), "normal_merr mask");
  const std::size_t n = valid.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    const double p[3] = {pred[i], pred[n + i], pred[2 * n + i]};
    const double g[3] = {gt[i], gt[n + i], gt[2 * n + i]};
    const double np = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    const double ng = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (np == 0 || ng == 0) {
      ++invalid_;
      continue;
    }
    const double cx = p[1] * g[2] - p[2] * g[1], cy = p[2] * g[0] - p[0] * g[2], cz = p[0] * g[1] - p[1] * g[0];
    const double dot = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
    sum_deg_ += std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot) * kRadToDeg;
    ++n_;
  }
}

std::optional<double> NormalAccumulator::mean_error_deg() const {
  if (!n_) return std::nullopt;
  return sum_deg_ / static_cast<double>(n_);
}

// ---- boundaries -------------------------------------------------------------------------

std::int64_t match_boundaries(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::int64_t height,
                              std::int64_t width, double radius) {
  const auto r = static_cast<std::int64_t>(std::floor(radius));
  const double r2 = radius * radius;
  std::vector<std::uint8_t> used(gt.size(), 0);
  std::int64_t matched = 0;
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) {
      if (!pred[y * width + x]) continue;
      std::int64_t best = -1;
      double best_d2 = r2 + 1;
      // Raster scan of the window, so equal distances keep the earliest pixel.
      for (std::int64_t yy = std::max<std::int64_t>(0, y - r); yy <= std::min(height - 1, y + r); ++yy)
        for (std::int64_t xx = std::max<std::int64_t>(0, x - r); xx <= std::min(width - 1, x + r); ++xx) {
          const std::int64_t q = yy * width + xx;
          if (!gt[q] || used[q]) continue;
          const double d2 = static_cast<double>((yy - y) * (yy - y) + (xx - x) * (xx - x));
          if (d2 <= r2 && d2 < best_d2) {
            best_d2 = d2;
            best = q;
          }
        }
      if (best >= 0) {
        used[best] = 1;
        ++matched;
      }
    }
  return matched;
}

BoundaryAccumulator::BoundaryAccumulator(BoundaryOptions opt) : opt_(std::move(opt)) {
  check_thresholds(opt_.thresholds);
  matched_.assign(opt_.thresholds.size(), 0);
  predicted_.assign(opt_.thresholds.size(), 0);
}

void BoundaryAccumulator::add(std::span<const double> prob, std::span<const std::uint8_t> gt, std::int64_t height,
                              std::int64_t width) {
  check_sizes(prob.size(), gt.size(), "boundary_odsf");
  check_sizes(prob.size(), static_cast<std::size_t>(height * width), "boundary_odsf extents");
  const double radius = opt_.tolerance_px
                            ? *opt_.tolerance_px
                            : opt_.tolerance_fraction * std::sqrt(static_cast<double>(height * height + width * width));
  gt_total_ += std::count_if(gt.begin(), gt.end(), [](std::uint8_t v) { return v != 0; });
  std::vector<std::uint8_t> pred(prob.size());
  for (std::size_t t = 0; t < opt_.thresholds.size(); ++t) {
    for (std::size_t i = 0; i < prob.size(); ++i) pred[i] = prob[i] >= opt_.thresholds[t];
    predicted_[t] += std::count(pred.begin(), pred.end(), 1);
    matched_[t] += match_boundaries(pred, gt, height, width, radius);
  }
}

namespace {

double f_measure(double p, double r, double beta_sq) {
  const double den = beta_sq * p + r;
  return den > 0 ? (1 + beta_sq) * p * r / den : 0.0;
}

}  // namespace

std::optional<double> BoundaryAccumulator::ods_f() const {
  if (!gt_total_) return std::nullopt;
  double best = 0;
  for (std::size_t t = 0; t < matched_.size(); ++t) {
    const double p = predicted_[t] ? static_cast<double>(matched_[t]) / static_cast<double>(predicted_[t]) : 0.0;
    const double r = static_cast<double>(matched_[t]) / static_cast<double>(gt_total_);
    best = std::max(best, f_measure(p, r, 1.0));
  }
  return 100.0 * best;
}

std::optional<double> BoundaryAccumulator::best_threshold() const {
  if (!gt_total_) return std::nullopt;
  double best = -1;
  std::size_t arg = 0;
  for (std::size_t t = 0; t < matched_.size(); ++t) {
    const double p = predicted_[t] ? static_cast<double>(matched_[t]) / static_cast<double>(predicted_[t]) : 0.0;
    const double f = f_measure(p, static_cast<double>(matched_[t]) / static_cast<double>(gt_total_), 1.0);
    if (f > best) {
      best = f;
      arg = t;
    }
  }
  return opt_.thresholds[arg];
}

// ---- saliency -------------------------------------------------------------------------------

SaliencyAccumulator::SaliencyAccumulator(std::vector<double> thresholds, double beta_sq)
    : thresholds_(std::move(thresholds)), beta_sq_(beta_sq) {
  check_thresholds(thresholds_);
  tp_.assign(thresholds_.size(), 0);
  fp_.assign(thresholds_.size(), 0);
  fn_.assign(thresholds_.size(), 0);
}

void SaliencyAccumulator::add(std::span<const double> prob, std::span<const std::uint8_t> gt) {
  check_sizes(prob.size(), gt.size(), "saliency_maxf");
  seen_ += static_cast<std::int64_t>(gt.size());
  for (std::size_t t = 0; t < thresholds_.size(); ++t)
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const bool p = prob[i] >= thresholds_[t], g = gt[i] != 0;
      tp_[t] += p && g;
      fp_[t] += p && !g;
      fn_[t] += !p && g;
    }
}

std::optional<double> SaliencyAccumulator::max_f() const {
  if (!seen_) return std::nullopt;
  double best = 0;
  for (std::size_t t = 0; t < thresholds_.size(); ++t) {
    const double p = tp_[t] + fp_[t] ? static_cast<double>(tp_[t]) / static_cast<double>(tp_[t] + fp_[t]) : 0.0;
    const double r = tp_[t] + fn_[t] ? static_cast<double>(tp_[t]) / static_cast<double>(tp_[t] + fn_[t]) : 0.0;
    best = std::max(best, f_measure(p, r, beta_sq_));
  }
  return 100.0 * best;
}

// ---- one-shot wrappers ------------------------------------------------------------------------

std::optional<double> miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                           std::int32_t num_classes, std::int32_t ignore_label) {
  SegmentationAccumulator acc(num_classes, ignore_label);
  acc.add(pred, gt);
  return acc.miou();
}

std::optional<double> depth_rmse(std::span<const double> pred, std::span<const double> gt,
                                 std::span<const std::uint8_t> valid) {
  DepthAccumulator acc;
  acc.add(pred, gt, valid);
  return acc.rmse();
}

std::optional<double> normal_merr(std::span<const double> pred, std::span<const double> gt,
                                  std::span<const std::uint8_t> valid) {
  NormalAccumulator acc;
  acc.add(pred, gt, valid);
  return acc.mean_error_deg();
}

std::optional<double> boundary_odsf(const std::vector<std::vector<double>>& probs,
                                    const std::vector<std::vector<std::uint8_t>>& gts, std::int64_t height,
                                    std::int64_t width, const BoundaryOptions& opt) {
  check_sizes(probs.size(), gts.size(), "boundary_odsf maps");
  BoundaryAccumulator acc(opt);
  for (std::size_t i = 0; i < probs.size(); ++i) acc.add(probs[i], gts[i], height, width);
  return acc.ods_f();
}

std::optional<double> saliency_maxf(const std::vector<std::vector<double>>& probs,
                                    const std::vector<std::vector<std::uint8_t>>& gts,
                                    const std::vector<double>& thresholds, double beta_sq) {
  check_sizes(probs.size(), gts.size(), "saliency_maxf maps");
  SaliencyAccumulator acc(thresholds, beta_sq);
  for (std::size_t i = 0; i < probs.size(); ++i) acc.add(probs[i], gts[i]);
  return acc.max_f();
}

// ---- reports ------------------------------------------------------------------------------------

const TaskMetric* MetricReport::find(const std::string& task) const {
  for (const auto& t : tasks)
    if (t.task == task) return &t;
  return nullptr;
}

double delta_mtl(const MetricReport& model, const MetricReport& baseline) {
  std::set<std::string> a, b;
  for (const auto& t : model.tasks) a.insert(t.task);
  for (const auto& t : baseline.tasks) b.insert(t.task);
  if (a != b || a.size() != model.tasks.size() || b.size() != baseline.tasks.size())
    throw ContractError("delta_mtl: '" + model.name + "' and '" + baseline.name + "' cover different task sets");
  if (model.tasks.empty()) throw ContractError("delta_mtl: no tasks");
  double sum = 0;
  for (const auto& m : model.tasks) {
    const TaskMetric* base = baseline.find(m.task);
    if (!m.value || !base->value) throw ContractError("delta_mtl: task '" + m.task + "' has no value");
    if (*base->value == 0) throw DomainError("delta_mtl: baseline value of '" + m.task + "' is zero");
    const double rel = (*m.value - *base->value) / *base->value;
    sum += m.higher_is_better ? rel : -rel;
  }
  return 100.0 * sum / static_cast<double>(model.tasks.size());
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : r.tasks) {
    nlohmann::json e{{"task", t.task}, {"metric", t.metric}, {"higher_is_better", t.higher_is_better}};
    e["value"] = t.value ? nlohmann::json(*t.value) : nlohmann::json(nullptr);
    j["tasks"].push_back(std::move(e));
  }
  j["baseline"] = r.baseline ? nlohmann::json(*r.baseline) : nlohmann::json(nullptr);
  j["delta_mtl"] = r.delta_mtl ? nlohmann::json(*r.delta_mtl) : nlohmann::json(nullptr);
  return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    r.name = j.at("name").get<std::string>();
    for (const auto& e : j.at("tasks")) {
      TaskMetric t;
      t.task = e.at("task").get<std::string>();
      t.metric = e.at("metric").get<std::string>();
      t.higher_is_better = e.at("higher_is_better").get<bool>();
      if (!e.at("value").is_null()) t.value = e.at("value").get<double>();
      r.tasks.push_back(std::move(t));
    }
    if (j.contains("baseline") && !j["baseline"].is_null()) r.baseline = j["baseline"].get<std::string>();
    if (j.contains("delta_mtl") && !j["delta_mtl"].is_null()) r.delta_mtl = j["delta_mtl"].get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metric report: ") + e.what());
  }
}

}  // namespace cvm::metrics
