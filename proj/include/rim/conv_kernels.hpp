// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <vector>

#include "rim/tensor.hpp"

namespace rim::detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;  // column-major
template <typename T>
using EMatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Reusable per-thread scratch buffers; convolution kernels never hold one
// across a nested op call, so slot reuse is safe.
template <typename T>
T* scratch(int slot, long n) {
  thread_local std::vector<T> pool[6];
  auto& v = pool[slot];
  if (static_cast<long>(v.size()) < n) v.resize(static_cast<size_t>(n));
  return v.data();
}

// Geometry of a same-padded convolution. Output spatial extents are
// ceil(in/stride); zero padding is split begin = total/2 (end gets the odd
// remainder), so stride-1 3x3 convs preserve spatial size.
struct ConvGeom {
  int batch, cin, h, w;
  int cout, k;
  int stride, dil;
  int ho, wo;
  int pad_h, pad_w;  // begin pads
  long patch() const { return static_cast<long>(cin) * k * k; }
  long ncols() const { return static_cast<long>(batch) * ho * wo; }
};

inline ConvGeom conv_geom(const Shape& xs, const Shape& ws, int stride, int dil) {
  check(xs.size() == 4, "conv: input must be 4-d, got " + shape_str(xs));
  check(ws.size() == 4, "conv: weight must be 4-d, got " + shape_str(ws));
  check(stride >= 1, "conv: stride must be positive, got " + std::to_string(stride));
  check(dil >= 1, "conv: dilation must be positive, got " + std::to_string(dil));
  check(ws[2] == ws[3] && ws[2] % 2 == 1, "conv: kernel must be square odd, got " + shape_str(ws));
  check(xs[1] == ws[1], "conv: input channels " + std::to_string(xs[1]) +
                            " do not match weight channels " + std::to_string(ws[1]));
  ConvGeom g;
  g.batch = xs[0];
  g.cin = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.cout = ws[0];
  g.k = ws[2];
  g.stride = stride;
  g.dil = dil;
  g.ho = (g.h + stride - 1) / stride;
  g.wo = (g.w + stride - 1) / stride;
  const int eff = (g.k - 1) * dil + 1;
  const int tot_h = std::max((g.ho - 1) * stride + eff - g.h, 0);
  const int tot_w = std::max((g.wo - 1) * stride + eff - g.w, 0);
  g.pad_h = tot_h / 2;
  g.pad_w = tot_w / 2;
  return g;
}

// Patch matrix in row-major (patch x ncols) layout: row r = (c, i, j) holds
// that tap across all output positions, so stride-1 fills are contiguous
// row segments of the image.
template <typename T>
void im2col(const ConvGeom& g, const T* x, T* col) {
  const long hw = static_cast<long>(g.h) * g.w;
  const long n_im = static_cast<long>(g.ho) * g.wo;
  const long N = g.ncols();
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.k; ++i)
      for (int j = 0; j < g.k; ++j) {
        T* row = col + ((static_cast<long>(c) * g.k + i) * g.k + j) * N;
        const int dy = i * g.dil - g.pad_h;
        const int dx = j * g.dil - g.pad_w;
        for (int b = 0; b < g.batch; ++b) {
          const T* xc = x + (static_cast<long>(b) * g.cin + c) * hw;
          T* dst = row + static_cast<long>(b) * n_im;
          for (int oy = 0; oy < g.ho; ++oy, dst += g.wo) {
            const int iy = oy * g.stride + dy;
            if (iy < 0 || iy >= g.h) {
              std::fill(dst, dst + g.wo, T(0));
              continue;
            }
            const T* src = xc + static_cast<long>(iy) * g.w;
            if (g.stride == 1) {
              // valid ox range: 0 <= ox + dx < w
              const int lo = std::max(0, -dx);
              const int hi = std::min(g.wo, g.w - dx);
              if (lo > 0) std::fill(dst, dst + lo, T(0));
              if (hi > lo) std::memcpy(dst + lo, src + lo + dx, sizeof(T) * static_cast<size_t>(hi - lo));
              if (hi < g.wo) std::fill(dst + std::max(hi, lo), dst + g.wo, T(0));
            } else {
              for (int ox = 0; ox < g.wo; ++ox) {
                const int ix = ox * g.stride + dx;
                dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
              }
            }
          }
        }
      }
}

// Adjoint of im2col: accumulates patch rows back into an image buffer
// (buffer must be zero-initialised by the caller).
template <typename T>
void col2im(const ConvGeom& g, const T* col, T* x) {
  const long hw = static_cast<long>(g.h) * g.w;
  const long n_im = static_cast<long>(g.ho) * g.wo;
  const long N = g.ncols();
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.k; ++i)
      for (int j = 0; j < g.k; ++j) {
        const T* row = col + ((static_cast<long>(c) * g.k + i) * g.k + j) * N;
        const int dy = i * g.dil - g.pad_h;
        const int dx = j * g.dil - g.pad_w;
        for (int b = 0; b < g.batch; ++b) {
          T* xc = x + (static_cast<long>(b) * g.cin + c) * hw;
          const T* src = row + static_cast<long>(b) * n_im;
          for (int oy = 0; oy < g.ho; ++oy, src += g.wo) {
            const int iy = oy * g.stride + dy;
            if (iy < 0 || iy >= g.h) continue;
            T* dst = xc + static_cast<long>(iy) * g.w;
            if (g.stride == 1) {
              const int lo = std::max(0, -dx);
              const int hi = std::min(g.wo, g.w - dx);
              for (int ox = lo; ox < hi; ++ox) dst[ox + dx] += src[ox];
            } else {
              for (int ox = 0; ox < g.wo; ++ox) {
                const int ix = ox * g.stride + dx;
                if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
              }
            }
          }
        }
      }
}

// Channel-plane matrix in (ncols x cout) column-major layout: column m is
// output channel m over all (batch, position); both directions are plain
// segment copies.
template <typename T>
void scatter_cols_to_chw(const ConvGeom& g, const T* yt, T* out) {
  const long n_im = static_cast<long>(g.ho) * g.wo;
  const long N = g.ncols();
  for (int m = 0; m < g.cout; ++m)
    for (int b = 0; b < g.batch; ++b)
      std::memcpy(out + (static_cast<long>(b) * g.cout + m) * n_im, yt + m * N + b * n_im,
                  sizeof(T) * static_cast<size_t>(n_im));
}

template <typename T>
void gather_chw_to_cols(const ConvGeom& g, const T* in, T* yt) {
  const long n_im = static_cast<long>(g.ho) * g.wo;
  const long N = g.ncols();
  for (int m = 0; m < g.cout; ++m)
    for (int b = 0; b < g.batch; ++b)
      std::memcpy(yt + m * N + b * n_im, in + (static_cast<long>(b) * g.cout + m) * n_im,
                  sizeof(T) * static_cast<size_t>(n_im));
}

// yt (ncols x cout) = col^T * W^T; the row-major buffers double as the
// transposed column-major views, so no data is reshuffled.
template <typename T>
void gemm_forward(const ConvGeom& g, const T* w, const T* col, T* yt) {
  Eigen::Map<const EMat<T>> colt(col, g.ncols(), g.patch());
  Eigen::Map<const EMat<T>> wt(w, g.patch(), static_cast<long>(g.cout));
  Eigen::Map<EMat<T>> out(yt, g.ncols(), static_cast<long>(g.cout));
  out.noalias() = colt * wt;
}

// dcol^T (ncols x patch) = dyt * W.
template <typename T>
void gemm_dx(const ConvGeom& g, const T* w, const T* dyt, T* dcol) {
  Eigen::Map<const EMatR<T>> wm(w, g.cout, g.patch());
  Eigen::Map<const EMat<T>> dy(dyt, g.ncols(), static_cast<long>(g.cout));
  Eigen::Map<EMat<T>> out(dcol, g.ncols(), g.patch());
  out.noalias() = dy * wm;
}

// dW^T (patch x cout) += col * dyt.
template <typename T>
void gemm_dw(const ConvGeom& g, const T* dyt, const T* col, T* dw) {
  Eigen::Map<const EMat<T>> colt(col, g.ncols(), g.patch());
  Eigen::Map<const EMat<T>> dy(dyt, g.ncols(), static_cast<long>(g.cout));
  Eigen::Map<EMat<T>> out(dw, g.patch(), static_cast<long>(g.cout));
  out.noalias() += colt.transpose() * dy;
}

}  // namespace rim::detail
