// SPDX-License-Identifier: Apache-2.0
//
// Toy multi-task network: a conv MTL encoder f(.), the cross-view module
// (spatial encoder, multi-view transformer, cost volume), fusion of the three
// feature sources and per-task heads.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cvm/autodiff/nn.hpp"
#include "cvm/costvolume/costvolume.hpp"
#include "cvm/crossview/crossview.hpp"
#include "cvm/dataio/manifest.hpp"

namespace cvm::mtl {

enum class LossKind { CrossEntropy, L1 };

struct TaskSpec {
  std::string name;  // segmentation | depth | normal | boundary | saliency | parts
  LossKind loss_kind = LossKind::CrossEntropy;
  double loss_weight = 1.0;
  bool higher_is_better = true;
  std::int64_t num_classes = 0;  // segmentation and parts

  /// Output channels of the head.
  std::int64_t channels() const;
  /// Throws ConfigError for unknown names, a loss kind that does not fit the
  /// task, nonpositive weights or missing class counts.
  void validate() const;
};

/// Spec with the conventional loss and metric direction for a task name.
TaskSpec make_task(const std::string& name, std::int64_t num_classes = 0, double weight = 1.0);
std::vector<TaskSpec> nyu_tasks(std::int64_t num_classes);

struct MtlEncoderConfig {
  std::string kind = "conv";
  std::vector<std::int64_t> channels{16, 16, 32, 32};
  std::vector<std::int64_t> strides{2, 1, 2, 1};
  std::vector<std::int64_t> tap_layers{1, 3};

  std::int64_t depth() const { return static_cast<std::int64_t>(channels.size()); }
  /// Product of strides up to the last tap.
  std::int64_t downsample() const;
  std::int64_t tap_stride(std::size_t tap) const;
  std::int64_t out_channels() const;  // sum of tap channels
  void validate() const;
};

/// 3x3 conv + SiLU stack; tapped outputs are returned in tap order.
class MtlEncoder {
 public:
  static MtlEncoder create(ad::ParamStore& ps, const std::string& name, const MtlEncoderConfig& cfg, Rng& rng);
  /// images [V,3,H,W]; H and W must be multiples of downsample().
  std::vector<ad::Tensor> operator()(const ad::Tensor& images) const;
  const MtlEncoderConfig& config() const { return cfg_; }

 private:
  MtlEncoderConfig cfg_;
  std::vector<ad::Conv2d> layers_;
};

enum class FusionMode {
  Full,             // MTL features + cost volume + cross-view features
  NoCrossFeatures,  // MTL features + cost volume
  NoCvm             // MTL features only
};

std::string to_string(FusionMode m);
/// Accepts "full", "no-cf", "no-cvm".
FusionMode fusion_mode_from_string(const std::string& s);

struct CvmConfig {
  cv::SpatialEncoderConfig encoder;
  cv::MvTransformerConfig transformer;
  std::int64_t depth_candidates = 128;
  double d_min = 1e-4, d_max = 10.0;
  costvol::DepthReduction reduction = costvol::DepthReduction::PerDepth;
  std::int64_t upsample_factor = 4;

  std::int64_t cost_channels() const {
    return reduction == costvol::DepthReduction::PerDepth ? depth_candidates : 1;
  }
  void validate() const;
};

struct ModelConfig {
  MtlEncoderConfig encoder;
  CvmConfig cvm;
  std::vector<TaskSpec> tasks = nyu_tasks(13);
  std::int64_t head_hidden = 64;
  FusionMode fusion = FusionMode::Full;

  /// Head resolution relative to the input: fused maps live at 1/2.
  static constexpr std::int64_t kHeadStride = 2;
  std::int64_t fused_channels() const;
  void validate() const;
};

struct FusedFeature {
  ad::Tensor values;  // [V, C_f + L' + C, H/2, W/2] (absent parts dropped)
  std::int64_t mtl_channels = 0, cost_channels = 0, cross_channels = 0;
};

/// Concatenate resized MTL taps with the learned-upsampled cost volume and
/// cross-view features. Inputs absent under the mode must be undefined.
FusedFeature fuse(const std::vector<ad::Tensor>& mtl_taps, const ad::Tensor& cost, const ad::Tensor& cross,
                  const ad::Tensor& up_cost_w, const ad::Tensor& up_cost_b, const ad::Tensor& up_cross_w,
                  const ad::Tensor& up_cross_b, std::int64_t upsample_factor, std::int64_t head_h,
                  std::int64_t head_w, FusionMode mode);

/// 1x1 conv -> SiLU -> 1x1 conv at head resolution, bilinear 2x to label
/// resolution, then the task's output activation.
struct TaskHead {
  TaskSpec spec;
  ad::Conv2d hidden, out;
  ad::Tensor operator()(const ad::Tensor& fused, std::int64_t out_h, std::int64_t out_w) const;
};

struct ForwardResult {
  std::map<std::string, ad::Tensor> preds;  // task -> [V, channels, H, W]
  std::optional<costvol::CostVolume> cost;
  FusedFeature fused;
};

class MtlModel {
 public:
  static MtlModel create(ad::ParamStore& ps, const ModelConfig& cfg, Rng& rng);

  /// images [V,3,H,W] with V >= 2 (duplicate single views beforehand);
  /// cameras at full resolution.
  ForwardResult forward(const ad::Tensor& images, const std::vector<geo::Camera>& cameras) const;
  /// Same, overriding the fusion mode the model was trained with.
  ForwardResult forward(const ad::Tensor& images, const std::vector<geo::Camera>& cameras, FusionMode mode) const;

  const ModelConfig& config() const { return cfg_; }
  /// Names of the parameters belonging to the cross-view module.
  static bool is_cvm_parameter(const std::string& name);

 private:
  ModelConfig cfg_;
  geo::DepthHypothesisSet hyp_;
  MtlEncoder encoder_;
  cv::SpatialEncoder spatial_;
  cv::MvTransformer transformer_;
  ad::Tensor up_cost_w_, up_cost_b_, up_cross_w_, up_cross_b_;
  std::vector<TaskHead> heads_;
};

/// Second view = copy of the first with identical camera; it carries no labels.
io::Sample duplicate_view(const io::Sample& s);

/// Stack view images into [V,3,H,W].
ad::Tensor stack_images(const io::Sample& s);
std::vector<geo::Camera> cameras_of(const io::Sample& s);

struct LossBreakdown {
  ad::Tensor total;                       // scalar
  std::map<std::string, double> per_task;  // mean over supervised views
};

/// Eq. 1 per supervised view, averaged over those views. Tasks the sample
/// has no labels for contribute nothing. Throws NumericError naming the task
/// when a term is not finite.
LossBreakdown multi_task_loss(const std::map<std::string, ad::Tensor>& preds, const io::Sample& sample,
                              const std::vector<TaskSpec>& specs, bool supervise_unlabelled_views = false);

/// Loss of one task on one view; pred is [channels, H, W].
ad::Tensor task_loss(const TaskSpec& spec, const ad::Tensor& pred, const io::SampleView& view);

}  // namespace cvm::mtl
