// SPDX-License-Identifier: Apache-2.0
#include "cvm/mtl/model.hpp"

#include <algorithm>
#include <cmath>

#include "cvm/core/error.hpp"

namespace cvm::mtl {

using ad::Tensor;

namespace {

bool is_classification(const std::string& n) { return n == "segmentation" || n == "parts"; }
bool is_binary(const std::string& n) { return n == "boundary" || n == "saliency"; }

}  // namespace

std::int64_t TaskSpec::channels() const {
  if (is_classification(name)) return num_classes;
  if (name == "normal") return 3;
  return 1;
}

void TaskSpec::validate() const {
  const bool known = is_classification(name) || is_binary(name) || name == "depth" || name == "normal";
  if (!known) throw ConfigError("unknown task '" + name + "'");
  const LossKind expected = (name == "depth" || name == "normal") ? LossKind::L1 : LossKind::CrossEntropy;
  if (loss_kind != expected) throw ConfigError("task '" + name + "' uses the wrong loss kind");
  if (!(loss_weight > 0)) throw ConfigError("task '" + name + "' needs a positive loss weight");
  if (is_classification(name) && num_classes < 2) throw ConfigError("task '" + name + "' needs >= 2 classes");
}

TaskSpec make_task(const std::string& name, std::int64_t num_classes, double weight) {
  TaskSpec t;
  t.name = name;
  t.loss_weight = weight;
  t.num_classes = is_classification(name) ? num_classes : 0;
  t.loss_kind = (name == "depth" || name == "normal") ? LossKind::L1 : LossKind::CrossEntropy;
  t.higher_is_better = !(name == "depth" || name == "normal");
  t.validate();
  return t;
}

std::vector<TaskSpec> nyu_tasks(std::int64_t num_classes) {
  return {make_task("segmentation", num_classes), make_task("depth"), make_task("normal"), make_task("boundary")};
}

std::int64_t MtlEncoderConfig::downsample() const {
  std::int64_t s = 1;
  for (std::int64_t i = 0; i <= tap_layers.back(); ++i) s *= strides[i];
  return s;
}

std::int64_t MtlEncoderConfig::tap_stride(std::size_t tap) const {
  std::int64_t s = 1;
  for (std::int64_t i = 0; i <= tap_layers[tap]; ++i) s *= strides[i];
  return s;
}

std::int64_t MtlEncoderConfig::out_channels() const {
  std::int64_t c = 0;
  for (auto t : tap_layers) c += channels[t];
  return c;
}

void MtlEncoderConfig::validate() const {
  if (kind != "conv") throw ConfigError("MTL encoder kind '" + kind + "' is not available (only 'conv')");
  if (channels.empty() || channels.size() != strides.size())
    throw ConfigError("MTL encoder: channels and strides must be nonempty and the same length");
  for (std::size_t i = 0; i < channels.size(); ++i)
    if (channels[i] <= 0 || (strides[i] != 1 && strides[i] != 2))
      throw ConfigError("MTL encoder: channels must be positive and strides 1 or 2");
  if (tap_layers.empty()) throw ConfigError("MTL encoder needs at least one tap layer");
  for (std::size_t i = 0; i < tap_layers.size(); ++i) {
    if (tap_layers[i] < 0 || tap_layers[i] >= depth())
      throw ConfigError("MTL encoder: tap layer " + std::to_string(tap_layers[i]) + " outside depth " +
                        std::to_string(depth()));
    if (i > 0 && tap_layers[i] <= tap_layers[i - 1]) throw ConfigError("MTL encoder: tap layers must increase");
  }
}

MtlEncoder MtlEncoder::create(ad::ParamStore& ps, const std::string& name, const MtlEncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  MtlEncoder e;
  e.cfg_ = cfg;
  std::int64_t in = 3;
  for (std::int64_t i = 0; i < cfg.depth(); ++i) {
    e.layers_.push_back(ad::Conv2d::create(ps, name + ".layer" + std::to_string(i), in, cfg.channels[i], 3,
                                           cfg.strides[i], 1, rng));
    in = cfg.channels[i];
  }
  return e;
}

std::vector<Tensor> MtlEncoder::operator()(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw DimensionError("MTL encoder expects [V,3,H,W], got " + ad::shape_str(images.shape()));
  const std::int64_t m = cfg_.downsample();
  if (images.dim(2) % m || images.dim(3) % m)
    throw ContractError("MTL encoder input " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                        " must be a multiple of " + std::to_string(m));
  std::vector<Tensor> taps;
  Tensor x = images;
  std::size_t next = 0;
  for (std::int64_t i = 0; i < cfg_.depth() && next < cfg_.tap_layers.size(); ++i) {
    x = ad::silu(layers_[i](x));
    if (i == cfg_.tap_layers[next]) {
      taps.push_back(x);
      ++next;
    }
  }
  return taps;
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Full:
      return "full";
    case FusionMode::NoCrossFeatures:
      return "no-cf";
    case FusionMode::NoCvm:
      return "no-cvm";
  }
  return "full";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "full") return FusionMode::Full;
  if (s == "no-cf") return FusionMode::NoCrossFeatures;
  if (s == "no-cvm") return FusionMode::NoCvm;
  throw ConfigError("unknown ablation '" + s + "' (expected full, no-cf or no-cvm)");
}

void CvmConfig::validate() const {
  encoder.validate();
  transformer.validate();
  if (transformer.channels != encoder.out_channels())
    throw ConfigError("transformer width " + std::to_string(transformer.channels) +
                      " must equal the spatial encoder width " + std::to_string(encoder.out_channels()));
  if (depth_candidates < 1) throw ConfigError("need at least one depth candidate");
  if (!(d_min > 0) || !(d_max > d_min)) throw ConfigError("depth range must satisfy 0 < d_min < d_max");
  if (upsample_factor < 1) throw ConfigError("upsample factor must be positive");
  if (encoder.downsample_factor != upsample_factor * ModelConfig::kHeadStride)
    throw ConfigError("cross-view features at 1/" + std::to_string(encoder.downsample_factor) +
                      " upsampled x" + std::to_string(upsample_factor) + " do not reach the 1/2 head resolution");
}

std::int64_t ModelConfig::fused_channels() const {
  std::int64_t c = encoder.out_channels();
  if (fusion != FusionMode::NoCvm) c += cvm.cost_channels();
  if (fusion == FusionMode::Full) c += cvm.encoder.out_channels();
  return c;
}

void ModelConfig::validate() const {
  encoder.validate();
  cvm.validate();
  if (tasks.empty()) throw ConfigError("at least one task is required");
  for (const auto& t : tasks) t.validate();
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i].name == tasks[j].name) throw ConfigError("task '" + tasks[i].name + "' listed twice");
  if (head_hidden < 1) throw ConfigError("head width must be positive");
}

FusedFeature fuse(const std::vector<Tensor>& mtl_taps, const Tensor& cost, const Tensor& cross, const Tensor& up_cost_w,
                  const Tensor& up_cost_b, const Tensor& up_cross_w, const Tensor& up_cross_b,
                  std::int64_t upsample_factor, std::int64_t head_h, std::int64_t head_w, FusionMode mode) {
  if (mtl_taps.empty()) throw ContractError("fuse: no MTL features");
  FusedFeature f;
  std::vector<Tensor> parts;
  const std::int64_t v = mtl_taps.front().dim(0);
  for (const auto& t : mtl_taps) {
    if (t.dim(0) != v) throw DimensionError("fuse: MTL taps disagree on the view count");
    parts.push_back(t.dim(2) == head_h && t.dim(3) == head_w ? t : ad::resize_bilinear(t, head_h, head_w));
    f.mtl_channels += t.dim(1);
  }
  auto lift = [&](const Tensor& x, const Tensor& w, const Tensor& b, const char* what) {
    if (!x.defined()) throw ContractError(std::string("fuse: ") + what + " required by the fusion mode");
    if (x.dim(0) != v) throw DimensionError(std::string("fuse: ") + what + " has a different view count");
    Tensor up = ad::upsample_learned(x, w, b, upsample_factor);
    if (up.dim(2) != head_h || up.dim(3) != head_w)
      throw DimensionError(std::string("fuse: upsampled ") + what + " is " + std::to_string(up.dim(2)) + "x" +
                           std::to_string(up.dim(3)) + ", heads expect " + std::to_string(head_h) + "x" +
                           std::to_string(head_w));
    return up;
  };
  if (mode != FusionMode::NoCvm) {
    parts.push_back(lift(cost, up_cost_w, up_cost_b, "cost volume"));
    f.cost_channels = cost.dim(1);
  }
  if (mode == FusionMode::Full) {
    parts.push_back(lift(cross, up_cross_w, up_cross_b, "cross-view features"));
    f.cross_channels = cross.dim(1);
  }
  f.values = parts.size() == 1 ? parts.front() : ad::concat(parts, 1);
  return f;
}

Tensor TaskHead::operator()(const Tensor& fused, std::int64_t out_h, std::int64_t out_w) const {
  Tensor y = out(ad::silu(hidden(fused)));
  y = ad::resize_bilinear(y, out_h, out_w);
  if (spec.name == "depth") return ad::add_scalar(ad::softplus(y), 1e-6);
  if (spec.name == "normal") return ad::l2_normalize(y, 1);
  return y;
}

MtlModel MtlModel::create(ad::ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  MtlModel m;
  m.cfg_ = cfg;
  m.hyp_ = geo::make_depth_hypotheses(cfg.cvm.depth_candidates, cfg.cvm.d_min, cfg.cvm.d_max);
  m.encoder_ = MtlEncoder::create(ps, "mtl", cfg.encoder, rng);
  m.spatial_ = cv::SpatialEncoder::create(ps, "cvm.spatial", cfg.cvm.encoder, rng);
  m.transformer_ = cv::MvTransformer::create(ps, "cvm.transformer", cfg.cvm.transformer, rng);
  const std::int64_t r2 = cfg.cvm.upsample_factor * cfg.cvm.upsample_factor;
  const std::int64_t lc = cfg.cvm.cost_channels(), cc = cfg.cvm.encoder.out_channels();
  m.up_cost_w_ = ps.uniform("cvm.up_cost.weight", {lc * r2, lc, 3, 3}, 1.0 / std::sqrt(9.0 * lc), rng);
  m.up_cost_b_ = ps.constant("cvm.up_cost.bias", {lc * r2}, 0.0);
  m.up_cross_w_ = ps.uniform("cvm.up_cross.weight", {cc * r2, cc, 3, 3}, 1.0 / std::sqrt(9.0 * cc), rng);
  m.up_cross_b_ = ps.constant("cvm.up_cross.bias", {cc * r2}, 0.0);
  const std::int64_t in = cfg.fused_channels();
  for (const auto& t : cfg.tasks) {
    TaskHead h;
    h.spec = t;
    h.hidden = ad::Conv2d::create(ps, "head." + t.name + ".hidden", in, cfg.head_hidden, 1, 1, 0, rng);
    h.out = ad::Conv2d::create(ps, "head." + t.name + ".out", cfg.head_hidden, t.channels(), 1, 1, 0, rng);
    m.heads_.push_back(std::move(h));
  }
  return m;
}

bool MtlModel::is_cvm_parameter(const std::string& name) { return name.rfind("cvm.", 0) == 0; }

ForwardResult MtlModel::forward(const Tensor& images, const std::vector<geo::Camera>& cameras) const {
  return forward(images, cameras, cfg_.fusion);
}

ForwardResult MtlModel::forward(const Tensor& images, const std::vector<geo::Camera>& cameras, FusionMode mode) const {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw DimensionError("model expects images [V,3,H,W], got " + ad::shape_str(images.shape()));
  const std::int64_t v = images.dim(0), h = images.dim(2), w = images.dim(3);
  if (static_cast<std::int64_t>(cameras.size()) != v)
    throw ContractError("model: " + std::to_string(cameras.size()) + " cameras for " + std::to_string(v) + " views");
  ModelConfig as_run = cfg_;
  as_run.fusion = mode;
  if (as_run.fused_channels() != cfg_.fused_channels())
    throw ContractError("model trained as '" + to_string(cfg_.fusion) + "' cannot run as '" + to_string(mode) + "'");
  const std::int64_t hh = h / ModelConfig::kHeadStride, hw = w / ModelConfig::kHeadStride;

  ForwardResult r;
  const auto taps = encoder_(images);
  Tensor cost, cross;
  if (mode != FusionMode::NoCvm) {
    if (v < 2) throw ContractError("the cross-view module needs >= 2 views; duplicate single views first");
    std::vector<geo::Vec3> centers;
    for (const auto& c : cameras) centers.push_back(c.pose.center());
    cross = transformer_(spatial_(images), centers);
    costvol::CostVolumeOptions opt;
    opt.reduction = cfg_.cvm.reduction;
    opt.downsample_factor = cfg_.cvm.encoder.downsample_factor;
    r.cost = costvol::build_cost_volume(cross, cameras, hyp_, opt);
    cost = r.cost->values;
  }
  r.fused = fuse(taps, cost, cross, up_cost_w_, up_cost_b_, up_cross_w_, up_cross_b_, cfg_.cvm.upsample_factor, hh,
                 hw, mode);
  for (const auto& head : heads_) r.preds[head.spec.name] = head(r.fused.values, h, w);
  return r;
}

io::Sample duplicate_view(const io::Sample& s) {
  if (s.views.size() != 1)
    throw ContractError("duplicate_view expects a single-view sample, got " + std::to_string(s.views.size()) + " views");
  io::Sample out = s;
  io::SampleView copy = s.views.front();
  copy.labelled = false;
  out.views.push_back(std::move(copy));
  return out;
}

Tensor stack_images(const io::Sample& s) {
  const std::int64_t p = s.height * s.width;
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(3 * p) * s.views.size());
  for (const auto& v : s.views) {
    if (static_cast<std::int64_t>(v.image.size()) != 3 * p) throw DimensionError("sample image has wrong size");
    data.insert(data.end(), v.image.begin(), v.image.end());
  }
  return Tensor::from({static_cast<std::int64_t>(s.views.size()), 3, s.height, s.width}, std::move(data));
}

std::vector<geo::Camera> cameras_of(const io::Sample& s) {
  std::vector<geo::Camera> c;
  for (const auto& v : s.views) c.push_back(v.camera);
  return c;
}

Tensor task_loss(const TaskSpec& spec, const Tensor& pred, const io::SampleView& view) {
  const std::int64_t p = pred.dim(1) * pred.dim(2);
  if (spec.name == "segmentation" || spec.name == "parts")
    return ad::cross_entropy(pred, view.segmentation, 255);
  if (spec.name == "depth") {
    std::vector<std::uint8_t> mask(view.depth.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = view.depth[i] > 0;
    return ad::masked_l1(pred, view.depth, mask);
  }
  if (spec.name == "normal") {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(3 * p), 0);
    for (std::int64_t q = 0; q < p; ++q) {
      const double n2 = view.normal[q] * view.normal[q] + view.normal[p + q] * view.normal[p + q] +
                        view.normal[2 * p + q] * view.normal[2 * p + q];
      if (n2 > 0.25) mask[q] = mask[p + q] = mask[2 * p + q] = 1;
    }
    return ad::masked_l1(pred, view.normal, mask);
  }
  if (spec.name == "boundary" || spec.name == "saliency") {
    std::vector<double> target(view.boundary.begin(), view.boundary.end());
    return ad::bce_with_logits(pred, target, {});
  }
  throw ConfigError("unknown task '" + spec.name + "'");
}

LossBreakdown multi_task_loss(const std::map<std::string, Tensor>& preds, const io::Sample& sample,
                              const std::vector<TaskSpec>& specs, bool supervise_unlabelled_views) {
  LossBreakdown out;
  std::int64_t supervised = 0;
  std::vector<Tensor> terms;
  for (std::size_t vi = 0; vi < sample.views.size(); ++vi) {
    const auto& view = sample.views[vi];
    if (!view.labelled && !supervise_unlabelled_views) continue;
    ++supervised;
    for (const auto& spec : specs) {
      if (!sample.has_task(spec.name)) continue;
      const auto it = preds.find(spec.name);
      if (it == preds.end()) throw ContractError("no prediction for task '" + spec.name + "'");
      const Tensor pv = ad::reshape(ad::narrow(it->second, 0, static_cast<std::int64_t>(vi), 1),
                                    {it->second.dim(1), it->second.dim(2), it->second.dim(3)});
      const Tensor l = task_loss(spec, pv, view);
      const double value = l.item();
      if (!std::isfinite(value))
        throw NumericError("non-finite " + spec.name + " loss on sample " + sample.id + " view " + std::to_string(vi));
      out.per_task[spec.name] += value;
      terms.push_back(spec.loss_weight == 1.0 ? l : ad::scale(l, spec.loss_weight));
    }
  }
  if (supervised == 0) throw ContractError("sample " + sample.id + " has no supervised view");
  for (auto& [k, v] : out.per_task) v /= static_cast<double>(supervised);
  Tensor total = terms.empty() ? Tensor::scalar(0.0) : terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  out.total = ad::scale(total, 1.0 / static_cast<double>(supervised));
  return out;
}

}  // namespace cvm::mtl
