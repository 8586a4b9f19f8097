// SPDX-License-Identifier: Apache-2.0
//
// Per-task numbers as printed in the NYUv2 result tables: segmentation mIoU,
// depth RMSE, normal mErr, boundary odsF.

#pragma once

#include <string>

#include "cvm/metrics/metrics.hpp"

namespace cvm::testing {

inline metrics::MetricReport nyu_row(const std::string& name, double seg, double depth, double normal, double bound) {
  return {name,
          {{"segmentation", "mIoU", seg, true},
           {"depth", "RMSE", depth, false},
           {"normal", "mErr", normal, false},
           {"boundary", "odsF", bound, true}},
          {},
          {}};
}

// Table 2 (baseline: single-task learning).
inline metrics::MetricReport stl() { return nyu_row("STL", 54.19, 0.5560, 19.22, 78.09); }
inline metrics::MetricReport dinov3() { return nyu_row("DINOv3", 63.68, 0.4113, 15.53, 80.10); }
inline metrics::MetricReport sak() { return nyu_row("SAK", 63.18, 0.4313, 16.25, 79.43); }
inline metrics::MetricReport radio() { return nyu_row("RADIO", 59.32, 0.4698, 17.46, 79.41); }

// Table 1 (baselines: the same backbone without video frames).
inline metrics::MetricReport sak_video() { return nyu_row("SAK+video", 62.60, 0.4093, 16.19, 79.58); }
inline metrics::MetricReport ours_sak() { return nyu_row("Ours (SAK)", 62.78, 0.4034, 16.10, 80.52); }
inline metrics::MetricReport dinov3_video() { return nyu_row("DINOv3+video", 64.03, 0.3954, 15.35, 80.52); }
inline metrics::MetricReport ours_dinov3() { return nyu_row("Ours (DINOv3)", 65.27, 0.3836, 15.35, 81.69); }

}  // namespace cvm::testing
