// SPDX-License-Identifier: Apache-2.0
#include "cvm/mtl/train.hpp"

#include <algorithm>
#include <cmath>

#include "cvm/core/error.hpp"

namespace cvm::mtl {

void TrainConfig::validate() const {
  if (steps <= 0) throw ConfigError("training steps must be positive");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) throw ConfigError("bad Adam moments");
  if (!(power > 0)) throw ConfigError("schedule power must be positive");
  if (min_lr_ratio < 0 || min_lr_ratio > 1) throw ConfigError("min_lr_ratio must lie in [0, 1]");
  if (views < 1) throw ConfigError("views must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be nonnegative");
}

double polynomial_lr(const TrainConfig& cfg, std::int64_t step) {
  const double floor = cfg.lr * cfg.min_lr_ratio;
  if (cfg.steps <= 1) return cfg.lr;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(cfg.steps - 1), 0.0, 1.0);
  return floor + (cfg.lr - floor) * std::pow(1.0 - frac, cfg.power);
}

AdamW::AdamW(ad::ParamStore& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, t] : params_.entries()) {
    m_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& entries = params_.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& [name, t] = entries[k];
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto x = t.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in parameter " + name);
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1, vh = v[i] / bc2;
      x[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * x[i]);
    }
  }
}

}  // namespace cvm::mtl
