// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "cvm/autodiff/params.hpp"

namespace cvm::mtl {

struct TrainConfig {
  std::int64_t steps = 40000;
  std::int64_t batch_size = 4;
  double lr = 2e-5;
  double weight_decay = 1e-6;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  /// lr(s) = floor + (lr - floor) * (1 - s / (steps - 1))^power, floor = lr * min_lr_ratio.
  double power = 0.9;
  double min_lr_ratio = 0.0;
  std::uint64_t seed = 0;
  std::int64_t views = 2;
  bool duplicate_single_view = true;
  /// Also supervise the duplicated copy of a single view.
  bool supervise_duplicate = false;
  /// Write an intermediate checkpoint every N steps (0 = only at the end).
  std::int64_t checkpoint_every = 0;

  void validate() const;
};

double polynomial_lr(const TrainConfig& cfg, std::int64_t step);

/// Decoupled weight decay Adam over every parameter of a store.
class AdamW {
 public:
  AdamW(ad::ParamStore& params, const TrainConfig& cfg);
  /// Apply one update from the gradients currently held by the parameters.
  /// Throws NumericError if a gradient or updated value is not finite.
  void step(double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  ad::ParamStore& params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace cvm::mtl
