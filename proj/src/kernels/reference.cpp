// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "cvm/kernels/kernels.hpp"

namespace cvm::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

void conv2d(std::int64_t batch, std::int64_t out_channels, const Conv2dGeometry& g,
            const double* x, const double* w, double* y) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t o = 0; o < out_channels; ++o)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::int64_t ch = 0; ch < g.channels; ++ch)
            for (std::int64_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                const std::int64_t iy = oy * g.stride - g.padding + ky;
                const std::int64_t ix = ox * g.stride - g.padding + kx;
                if (iy < 0 || ix < 0 || iy >= g.height || ix >= g.width) continue;
                acc += x[((b * g.channels + ch) * g.height + iy) * g.width + ix] *
                       w[((o * g.channels + ch) * g.kernel_h + ky) * g.kernel_w + kx];
              }
          y[((b * out_channels + o) * oh + oy) * ow + ox] = acc;
        }
}

namespace {

double fetch(const double* f, std::int64_t height, std::int64_t width, double xi, double yi) {
  if (xi < 0 || yi < 0 || xi > static_cast<double>(width - 1) ||
      yi > static_cast<double>(height - 1))
    return 0.0;
  return f[static_cast<std::int64_t>(yi) * width + static_cast<std::int64_t>(xi)];
}

double sample_one(const double* f, std::int64_t height, std::int64_t width, double x, double y) {
  const double x0 = std::floor(x), y0 = std::floor(y);
  if (!std::isfinite(x0) || !std::isfinite(y0)) return 0.0;
  const double wx = x - x0, wy = y - y0;
  return (1 - wx) * (1 - wy) * fetch(f, height, width, x0, y0) +
         wx * (1 - wy) * fetch(f, height, width, x0 + 1, y0) +
         (1 - wx) * wy * fetch(f, height, width, x0, y0 + 1) +
         wx * wy * fetch(f, height, width, x0 + 1, y0 + 1);
}

}  // namespace

void bilinear_sample(std::int64_t channels, std::int64_t height, std::int64_t width,
                     const double* feat, std::int64_t n, const double* grid, double* out,
                     std::uint8_t* valid) {
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = grid[2 * i], y = grid[2 * i + 1];
    if (valid)
      valid[i] = (x >= 0 && y >= 0 && x <= width - 1.0 && y <= height - 1.0) ? 1 : 0;
    for (std::int64_t ch = 0; ch < channels; ++ch)
      out[ch * n + i] = sample_one(feat + ch * height * width, height, width, x, y);
  }
}

void plane_sweep_correlation(std::int64_t channels, std::int64_t pixels, std::int64_t depths,
                             const double* ref, std::int64_t src_h, std::int64_t src_w,
                             const double* src, const double* grid, double scale, double* out,
                             std::uint8_t* valid) {
  for (std::int64_t d = 0; d < depths; ++d)
    for (std::int64_t p = 0; p < pixels; ++p) {
      const std::int64_t dp = d * pixels + p;
      const double x = grid[2 * dp], y = grid[2 * dp + 1];
      if (valid)
        valid[dp] = (x >= 0 && y >= 0 && x <= src_w - 1.0 && y <= src_h - 1.0) ? 1 : 0;
      double acc = 0.0;
      for (std::int64_t ch = 0; ch < channels; ++ch)
        acc += ref[ch * pixels + p] * sample_one(src + ch * src_h * src_w, src_h, src_w, x, y);
      out[dp] = scale * acc;
    }
}

}  // namespace cvm::kernels::reference
