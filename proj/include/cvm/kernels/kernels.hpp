// SPDX-License-Identifier: Apache-2.0
//
// Dense compute kernels behind the autodiff primitives.
//
// Two implementations of every kernel live side by side:
//   cvm::kernels::reference  - plain serial loops, the readable ground truth
//   cvm::kernels             - blocked / OpenMP-parallel versions used by the ops
//
// The parallel versions only split work over independent output elements and
// never reorder a reduction, so results are bitwise identical for any thread
// count. They are not bitwise identical to the reference loops (different
// association order); tests compare them at 1e-12 relative.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace cvm::kernels {

/// Number of worker threads used by the parallel kernels. Default 1.
void set_num_threads(int n);
int num_threads();

/// C[M,N] (+)= op(A) * op(B). op(A) is A[M,K] or, transposed, A stored [K,M].
/// When accumulate is false C is overwritten.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const double* a, const double* b, double* c, bool accumulate);

struct Conv2dGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride, padding;
  std::int64_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::int64_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
};

/// Unfold one image [C,H,W] into columns [C*kh*kw, H'*W'].
void im2col(const Conv2dGeometry& g, const double* image, double* columns);
/// Adjoint of im2col: accumulates columns back into image [C,H,W].
void col2im(const Conv2dGeometry& g, const double* columns, double* image);

/// Bilinear sample of feat[C,H,W] at pixel coordinates grid[N,2] (x, y).
/// Out-of-bounds neighbors contribute zero. out is [C,N]; valid[n] set when
/// the sample lies inside [0,W-1]x[0,H-1] (may be null).
void bilinear_sample(std::int64_t channels, std::int64_t height, std::int64_t width,
                     const double* feat, std::int64_t n, const double* grid, double* out,
                     std::uint8_t* valid);

/// Adjoints of bilinear_sample. grad_feat [C,H,W] and grad_grid [N,2] are
/// accumulated into; either may be null.
void bilinear_sample_backward(std::int64_t channels, std::int64_t height, std::int64_t width,
                              const double* feat, std::int64_t n, const double* grid,
                              const double* grad_out, double* grad_feat, double* grad_grid);

/// Plane-sweep correlation: for every depth slice d and reference pixel p,
///   out[d,p] = scale * sum_c ref[c,p] * sample(src[c], grid[d,p]).
/// ref is [C,P] (P = H*W of the reference grid), src is [C,Hs,Ws], grid is
/// [D,P,2]. valid is [D,P] (may be null).
void plane_sweep_correlation(std::int64_t channels, std::int64_t pixels, std::int64_t depths,
                             const double* ref, std::int64_t src_h, std::int64_t src_w,
                             const double* src, const double* grid, double scale, double* out,
                             std::uint8_t* valid);

void plane_sweep_correlation_backward(std::int64_t channels, std::int64_t pixels,
                                      std::int64_t depths, const double* ref, std::int64_t src_h,
                                      std::int64_t src_w, const double* src, const double* grid,
                                      double scale, const double* grad_out, double* grad_ref,
                                      double* grad_src);

namespace reference {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const double* a, const double* b, double* c, bool accumulate);

/// Direct (non-im2col) cross-correlation of a batch: x[B,C,H,W], w[O,C,kh,kw]
/// -> y[B,O,H',W'].
void conv2d(std::int64_t batch, std::int64_t out_channels, const Conv2dGeometry& g,
            const double* x, const double* w, double* y);

void bilinear_sample(std::int64_t channels, std::int64_t height, std::int64_t width,
                     const double* feat, std::int64_t n, const double* grid, double* out,
                     std::uint8_t* valid);

void plane_sweep_correlation(std::int64_t channels, std::int64_t pixels, std::int64_t depths,
                             const double* ref, std::int64_t src_h, std::int64_t src_w,
                             const double* src, const double* grid, double scale, double* out,
                             std::uint8_t* valid);

}  // namespace reference

}  // namespace cvm::kernels
