// SPDX-License-Identifier: Apache-2.0
#include "cvm/kernels/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef CVM_HAVE_OPENMP
#include <omp.h>
#endif

namespace cvm::kernels {

namespace {

std::atomic<int> g_threads{1};

// Column block of B/C processed per pass; sized so a K x kBlockN panel of B
// stays cache resident for K up to a few hundred.
constexpr std::int64_t kBlockN = 256;

void pack_transpose(std::int64_t rows, std::int64_t cols, const double* src, double* dst) {
  // src [rows, cols] -> dst [cols, rows]
  constexpr std::int64_t tile = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += tile) {
    const std::int64_t r1 = std::min(rows, r0 + tile);
    for (std::int64_t c0 = 0; c0 < cols; c0 += tile) {
      const std::int64_t c1 = std::min(cols, c0 + tile);
      for (std::int64_t r = r0; r < r1; ++r)
        for (std::int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
  }
}

struct BilinearTap {
  std::int64_t index[4];  // -1 when out of bounds
  double weight[4];
};

inline BilinearTap make_tap(std::int64_t height, std::int64_t width, double x, double y) {
  BilinearTap tap{};
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double wx = x - fx;
  const double wy = y - fy;
  const double w[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
  const bool finite = std::isfinite(fx) && std::isfinite(fy);
  for (int k = 0; k < 4; ++k) {
    tap.index[k] = -1;
    tap.weight[k] = 0.0;
    if (!finite) continue;
    const double xi = fx + (k & 1);
    const double yi = fy + (k >> 1);
    if (xi < 0 || yi < 0 || xi > static_cast<double>(width - 1) ||
        yi > static_cast<double>(height - 1))
      continue;
    tap.index[k] = static_cast<std::int64_t>(yi) * width + static_cast<std::int64_t>(xi);
    tap.weight[k] = w[k];
  }
  return tap;
}

inline bool inside(std::int64_t height, std::int64_t width, double x, double y) {
  return x >= 0.0 && y >= 0.0 && x <= static_cast<double>(width - 1) &&
         y <= static_cast<double>(height - 1);
}

}  // namespace

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }
int num_threads() { return g_threads.load(); }

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  if (m <= 0 || n <= 0) return;
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (k <= 0) return;

  std::vector<double> a_packed, b_packed;
  const double* a_rm = a;  // row-major [M,K]
  const double* b_rm = b;  // row-major [K,N]
  if (trans_a) {
    a_packed.resize(static_cast<std::size_t>(m * k));
    pack_transpose(k, m, a, a_packed.data());
    a_rm = a_packed.data();
  }
  if (trans_b) {
    b_packed.resize(static_cast<std::size_t>(k * n));
    pack_transpose(n, k, b, b_packed.data());
    b_rm = b_packed.data();
  }

  const int threads = num_threads();
  for (std::int64_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::int64_t jn = std::min(kBlockN, n - j0);
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1 && m > 1) schedule(static)
#endif
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = c + i * n + j0;
      const double* arow = a_rm + i * k;
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b_rm + p * n + j0;
        for (std::int64_t j = 0; j < jn; ++j) crow[j] += av * brow[j];
      }
    }
  }
  (void)threads;
}

void im2col(const Conv2dGeometry& g, const double* image, double* columns) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  const std::int64_t plane = oh * ow;
  const int threads = num_threads();
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1) schedule(static)
#endif
  for (std::int64_t ch = 0; ch < g.channels; ++ch) {
    const double* src = image + ch * g.height * g.width;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        double* dst = columns + ((ch * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          double* drow = dst + oy * ow;
          if (iy < 0 || iy >= g.height) {
            std::fill(drow, drow + ow, 0.0);
            continue;
          }
          const double* srow = src + iy * g.width;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kx;
            drow[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
  (void)threads;
}

void col2im(const Conv2dGeometry& g, const double* columns, double* image) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  const std::int64_t plane = oh * ow;
  const int threads = num_threads();
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1) schedule(static)
#endif
  for (std::int64_t ch = 0; ch < g.channels; ++ch) {
    double* dst = image + ch * g.height * g.width;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* src = columns + ((ch * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          double* drow = dst + iy * g.width;
          const double* srow = src + oy * ow;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
  (void)threads;
}

void bilinear_sample(std::int64_t channels, std::int64_t height, std::int64_t width,
                     const double* feat, std::int64_t n, const double* grid, double* out,
                     std::uint8_t* valid) {
  const std::int64_t plane = height * width;
  const int threads = num_threads();
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1) schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = grid[2 * i], y = grid[2 * i + 1];
    const BilinearTap tap = make_tap(height, width, x, y);
    if (valid) valid[i] = inside(height, width, x, y) ? 1 : 0;
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      const double* f = feat + ch * plane;
      double acc = 0.0;
      for (int q = 0; q < 4; ++q)
        if (tap.index[q] >= 0) acc += tap.weight[q] * f[tap.index[q]];
      out[ch * n + i] = acc;
    }
  }
  (void)threads;
}

void bilinear_sample_backward(std::int64_t channels, std::int64_t height, std::int64_t width,
                              const double* feat, std::int64_t n, const double* grid,
                              const double* grad_out, double* grad_feat, double* grad_grid) {
  const std::int64_t plane = height * width;
  const int threads = num_threads();
  if (grad_feat) {
    std::vector<BilinearTap> taps(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) taps[i] = make_tap(height, width, grid[2 * i], grid[2 * i + 1]);
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1) schedule(static)
#endif
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      double* gf = grad_feat + ch * plane;
      const double* go = grad_out + ch * n;
      for (std::int64_t i = 0; i < n; ++i) {
        const BilinearTap& tap = taps[i];
        for (int q = 0; q < 4; ++q)
          if (tap.index[q] >= 0) gf[tap.index[q]] += tap.weight[q] * go[i];
      }
    }
  }
  if (grad_grid) {
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1) schedule(static)
#endif
    for (std::int64_t i = 0; i < n; ++i) {
      const double x = grid[2 * i], y = grid[2 * i + 1];
      const double fx = std::floor(x), fy = std::floor(y);
      if (!std::isfinite(fx) || !std::isfinite(fy)) continue;
      const double wx = x - fx, wy = y - fy;
      const std::int64_t x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
      auto at = [&](const double* f, std::int64_t xx, std::int64_t yy) {
        if (xx < 0 || yy < 0 || xx >= width || yy >= height) return 0.0;
        return f[yy * width + xx];
      };
      double gx = 0.0, gy = 0.0;
      for (std::int64_t ch = 0; ch < channels; ++ch) {
        const double* f = feat + ch * plane;
        const double v00 = at(f, x0, y0), v10 = at(f, x0 + 1, y0);
        const double v01 = at(f, x0, y0 + 1), v11 = at(f, x0 + 1, y0 + 1);
        const double g = grad_out[ch * n + i];
        gx += g * ((1 - wy) * (v10 - v00) + wy * (v11 - v01));
        gy += g * ((1 - wx) * (v01 - v00) + wx * (v11 - v10));
      }
      grad_grid[2 * i] += gx;
      grad_grid[2 * i + 1] += gy;
    }
  }
  (void)threads;
}

void plane_sweep_correlation(std::int64_t channels, std::int64_t pixels, std::int64_t depths,
                             const double* ref, std::int64_t src_h, std::int64_t src_w,
                             const double* src, const double* grid, double scale, double* out,
                             std::uint8_t* valid) {
  const std::int64_t plane = src_h * src_w;
  const std::int64_t total = depths * pixels;
  const int threads = num_threads();
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1) schedule(static)
#endif
  for (std::int64_t dp = 0; dp < total; ++dp) {
    const std::int64_t p = dp % pixels;
    const double x = grid[2 * dp], y = grid[2 * dp + 1];
    const BilinearTap tap = make_tap(src_h, src_w, x, y);
    if (valid) valid[dp] = inside(src_h, src_w, x, y) ? 1 : 0;
    double acc = 0.0;
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      const double* f = src + ch * plane;
      double s = 0.0;
      for (int q = 0; q < 4; ++q)
        if (tap.index[q] >= 0) s += tap.weight[q] * f[tap.index[q]];
      acc += ref[ch * pixels + p] * s;
    }
    out[dp] = scale * acc;
  }
  (void)threads;
}

void plane_sweep_correlation_backward(std::int64_t channels, std::int64_t pixels,
                                      std::int64_t depths, const double* ref, std::int64_t src_h,
                                      std::int64_t src_w, const double* src, const double* grid,
                                      double scale, const double* grad_out, double* grad_ref,
                                      double* grad_src) {
  const std::int64_t plane = src_h * src_w;
  const std::int64_t total = depths * pixels;
  std::vector<BilinearTap> taps(static_cast<std::size_t>(total));
  for (std::int64_t dp = 0; dp < total; ++dp)
    taps[dp] = make_tap(src_h, src_w, grid[2 * dp], grid[2 * dp + 1]);
  const int threads = num_threads();
  // Each channel owns its slice of grad_ref and grad_src, so splitting over
  // channels needs no synchronisation and keeps every accumulation ordered.
#ifdef CVM_HAVE_OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1) schedule(static)
#endif
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    const double* f = src + ch * plane;
    const double* r = ref + ch * pixels;
    double* gr = grad_ref ? grad_ref + ch * pixels : nullptr;
    double* gs = grad_src ? grad_src + ch * plane : nullptr;
    for (std::int64_t dp = 0; dp < total; ++dp) {
      const double g = grad_out[dp] * scale;
      if (g == 0.0) continue;
      const std::int64_t p = dp % pixels;
      const BilinearTap& tap = taps[dp];
      if (gr) {
        double s = 0.0;
        for (int q = 0; q < 4; ++q)
          if (tap.index[q] >= 0) s += tap.weight[q] * f[tap.index[q]];
        gr[p] += g * s;
      }
      if (gs) {
        const double gv = g * r[p];
        for (int q = 0; q < 4; ++q)
          if (tap.index[q] >= 0) gs[tap.index[q]] += tap.weight[q] * gv;
      }
    }
  }
  (void)threads;
}

}  // namespace cvm::kernels
