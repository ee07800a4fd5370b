// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>

#include "rim/conv_kernels.hpp"
#include "rim/tensor.hpp"

// Reverse-mode ops. Every op validates shapes, computes the forward value
// into a fresh tensor and, when the graph is recording and an input is
// tracked, pushes a closure that routes the output gradient to its inputs.

namespace rim {

namespace detail {

template <typename T>
inline void acc(Graph<T>& g, int node, const std::vector<T>& v) {
  if (node < 0) return;
  auto& buf = g.grad_buf(node);
  for (size_t i = 0; i < v.size(); ++i) buf[i] += v[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// arithmetic

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  detail::attach<T>(g, out, {&a, &b}, [ia = a.node, ib = b.node](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    detail::acc(gg, ia, go);
    detail::acc(gg, ib, go);
  });
  return out;
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "sub: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  detail::attach<T>(g, out, {&a, &b}, [ia = a.node, ib = b.node](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    detail::acc(gg, ia, go);
    if (ib >= 0) {
      auto& buf = gg.grad_buf(ib);
      for (size_t i = 0; i < go.size(); ++i) buf[i] -= go[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  detail::attach<T>(g, out, {&a, &b},
                    [ia = a.node, ib = b.node, da = a.data, db = b.data](Graph<T>& gg, int self) {
                      const auto& go = gg.grad_buf(self);
                      if (ia >= 0) {
                        auto& buf = gg.grad_buf(ia);
                        for (size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * (*db)[i];
                      }
                      if (ib >= 0) {
                        auto& buf = gg.grad_buf(ib);
                        for (size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * (*da)[i];
                      }
                    });
  return out;
}

// x * c for a plain constant c.
template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = px[i] * c;
  detail::attach<T>(g, out, {&x}, [ix = x.node, c](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    if (ix >= 0) {
      auto& buf = gg.grad_buf(ix);
      for (size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * c;
    }
  });
  return out;
}

template <typename T>
Tensor<T> add_const(Graph<T>& g, const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = px[i] + c;
  detail::attach<T>(g, out, {&x}, [ix = x.node](Graph<T>& gg, int self) {
    detail::acc(gg, ix, gg.grad_buf(self));
  });
  return out;
}

// x scaled by a one-element tensor (gradients flow to both factors).
template <typename T>
Tensor<T> scale_by(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& s) {
  check(s.size() == 1, "scale_by: scale must be a one-element tensor, shape " + shape_str(s.shape));
  const T sv = (*s.data)[0];
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = px[i] * sv;
  detail::attach<T>(g, out, {&x, &s},
                    [ix = x.node, is = s.node, sv, dx = x.data](Graph<T>& gg, int self) {
                      const auto& go = gg.grad_buf(self);
                      if (ix >= 0) {
                        auto& buf = gg.grad_buf(ix);
                        for (size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * sv;
                      }
                      if (is >= 0) {
                        T dot = T(0);
                        for (size_t i = 0; i < go.size(); ++i) dot += go[i] * (*dx)[i];
                        gg.grad_buf(is)[0] += dot;
                      }
                    });
  return out;
}

template <typename T>
Tensor<T> recip(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = T(1) / px[i];
  detail::attach<T>(g, out, {&x}, [ix = x.node, dy = out.data](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    if (ix >= 0) {
      auto& buf = gg.grad_buf(ix);
      for (size_t i = 0; i < go.size(); ++i) buf[i] -= go[i] * (*dy)[i] * (*dy)[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

template <typename T>
Tensor<T> tanh(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
  detail::attach<T>(g, out, {&x}, [ix = x.node, dy = out.data](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    if (ix >= 0) {
      auto& buf = gg.grad_buf(ix);
      for (size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * (T(1) - (*dy)[i] * (*dy)[i]);
    }
  });
  return out;
}

template <typename T>
inline T sigmoid_val(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = sigmoid_val(px[i]);
  detail::attach<T>(g, out, {&x}, [ix = x.node, dy = out.data](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    if (ix >= 0) {
      auto& buf = gg.grad_buf(ix);
      for (size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * (*dy)[i] * (T(1) - (*dy)[i]);
    }
  });
  return out;
}

template <typename T>
inline T softplus_val(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
Tensor<T> softplus(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = softplus_val(px[i]);
  detail::attach<T>(g, out, {&x}, [ix = x.node, dx = x.data](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    if (ix >= 0) {
      auto& buf = gg.grad_buf(ix);
      for (size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * sigmoid_val((*dx)[i]);
    }
  });
  return out;
}

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = out.size();
  for (long i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  detail::attach<T>(g, out, {&x}, [ix = x.node, dx = x.data](Graph<T>& gg, int self) {
    const auto& go = gg.grad_buf(self);
    if (ix >= 0) {
      auto& buf = gg.grad_buf(ix);
      for (size_t i = 0; i < go.size(); ++i)
        if ((*dx)[i] > T(0)) buf[i] += go[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// structure

template <typename T>
Tensor<T> concat_channels(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() == 4 && b.rank() == 4,
        "concat_channels: need 4-d tensors, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  check(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
        "concat_channels: batch/spatial mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const long hw = static_cast<long>(a.dim(2)) * a.dim(3);
  Tensor<T> out = Tensor<T>::zeros({batch, ca + cb, a.dim(2), a.dim(3)});
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int i = 0; i < batch; ++i) {
    std::copy(pa + i * ca * hw, pa + (i + 1) * ca * hw, po + i * (ca + cb) * hw);
    std::copy(pb + i * cb * hw, pb + (i + 1) * cb * hw, po + i * (ca + cb) * hw + ca * hw);
  }
  detail::attach<T>(g, out, {&a, &b},
                    [ia = a.node, ib = b.node, batch, ca, cb, hw](Graph<T>& gg, int self) {
                      const auto& go = gg.grad_buf(self);
                      if (ia >= 0) {
                        auto& buf = gg.grad_buf(ia);
                        for (int i = 0; i < batch; ++i)
                          for (long j = 0; j < ca * hw; ++j)
                            buf[static_cast<size_t>(i * ca * hw + j)] += go[static_cast<size_t>(i * (ca + cb) * hw + j)];
                      }
                      if (ib >= 0) {
                        auto& buf = gg.grad_buf(ib);
                        for (int i = 0; i < batch; ++i)
                          for (long j = 0; j < cb * hw; ++j)
                            buf[static_cast<size_t>(i * cb * hw + j)] +=
                                go[static_cast<size_t>(i * (ca + cb) * hw + ca * hw + j)];
                      }
                    });
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  T s = T(0);
  const T* px = x.ptr();
  const long n = x.size();
  for (long i = 0; i < n; ++i) s += px[i];
  Tensor<T> out = Tensor<T>::scalar(s);
  detail::attach<T>(g, out, {&x}, [ix = x.node, n](Graph<T>& gg, int self) {
    const T go = gg.grad_buf(self)[0];
    if (ix >= 0) {
      auto& buf = gg.grad_buf(ix);
      for (long i = 0; i < n; ++i) buf[static_cast<size_t>(i)] += go;
    }
  });
  return out;
}

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(Graph<T>& g, const Tensor<T>& pred, const Tensor<T>& target) {
  check(pred.shape == target.shape,
        "mse: shape mismatch " + shape_str(pred.shape) + " vs " + shape_str(target.shape));
  const long n = pred.size();
  const T* pp = pred.ptr();
  const T* pt = target.ptr();
  T s = T(0);
  for (long i = 0; i < n; ++i) {
    const T d = pp[i] - pt[i];
    s += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(n));
  detail::attach<T>(g, out, {&pred, &target},
                    [ip = pred.node, it = target.node, dp = pred.data, dt = target.data, n](Graph<T>& gg, int self) {
                      const T go = gg.grad_buf(self)[0];
                      const T c = T(2) * go / static_cast<T>(n);
                      if (ip >= 0) {
                        auto& buf = gg.grad_buf(ip);
                        for (long i = 0; i < n; ++i)
                          buf[static_cast<size_t>(i)] += c * ((*dp)[static_cast<size_t>(i)] - (*dt)[static_cast<size_t>(i)]);
                      }
                      if (it >= 0) {
                        auto& buf = gg.grad_buf(it);
                        for (long i = 0; i < n; ++i)
                          buf[static_cast<size_t>(i)] -= c * ((*dp)[static_cast<size_t>(i)] - (*dt)[static_cast<size_t>(i)]);
                      }
                    });
  return out;
}

// ---------------------------------------------------------------------------
// convolutions

namespace detail {

template <typename T>
void add_bias_chw(const Tensor<T>& b, int channels, long hw, Tensor<T>& out) {
  if (!b.defined() || b.size() == 0) return;
  check(b.size() == channels, "conv: bias size " + std::to_string(b.size()) + " does not match " +
                                  std::to_string(channels) + " channels");
  T* po = out.ptr();
  const T* pb = b.ptr();
  const long per_batch = channels * hw;
  const long batches = out.size() / per_batch;
  for (long i = 0; i < batches; ++i)
    for (int c = 0; c < channels; ++c) {
      T* row = po + i * per_batch + c * hw;
      for (long j = 0; j < hw; ++j) row[j] += pb[c];
    }
}

}  // namespace detail

// Patch matrix of one input at one geometry, shareable between convolutions
// with the same receptive-field layout (the geometry's cout is a don't-care)
// and kept alive for the weight-gradient pass.
template <typename T>
struct PatchMatrix {
  detail::ConvGeom geom{};
  std::shared_ptr<T[]> col;
};

template <typename T>
PatchMatrix<T> build_patches(const Tensor<T>& x, int k, int stride, int dilation) {
  PatchMatrix<T> pm;
  pm.geom = detail::conv_geom(x.shape, {1, x.dim(1), k, k}, stride, dilation);
  const long kn = pm.geom.patch() * pm.geom.ncols();
  pm.col = std::shared_ptr<T[]>(new T[static_cast<size_t>(kn)]);
  detail::im2col(pm.geom, x.ptr(), pm.col.get());
  return pm;
}

// Same-padded convolution on a prebuilt patch matrix; x must be the tensor
// the patches were built from.
template <typename T>
Tensor<T> conv2d_on(Graph<T>& g, const PatchMatrix<T>& pm, const Tensor<T>& x, const Tensor<T>& w,
                    const Tensor<T>& b) {
  detail::ConvGeom geom = pm.geom;
  check(w.rank() == 4 && w.dim(1) == geom.cin && w.dim(2) == geom.k && w.dim(3) == geom.k,
        "conv2d: weight " + shape_str(w.shape) + " does not fit the prebuilt patches");
  geom.cout = w.dim(0);
  const long mn = geom.cout * geom.ncols();
  T* yt = detail::scratch<T>(1, mn);
  detail::gemm_forward(geom, w.ptr(), pm.col.get(), yt);
  Tensor<T> out = Tensor<T>::zeros({geom.batch, geom.cout, geom.ho, geom.wo});
  detail::scatter_cols_to_chw(geom, yt, out.ptr());
  detail::add_bias_chw(b, geom.cout, static_cast<long>(geom.ho) * geom.wo, out);

  detail::attach<T>(
      g, out, {&x, &w, &b},
      [geom, mn, col = pm.col, ix = x.node, iw = w.node, ib = b.node, dw = w.data](Graph<T>& gg,
                                                                                   int self) {
        const auto& go = gg.grad_buf(self);
        T* dyt = detail::scratch<T>(2, mn);
        detail::gather_chw_to_cols(geom, go.data(), dyt);
        if (iw >= 0) detail::gemm_dw(geom, dyt, col.get(), gg.grad_buf(iw).data());
        if (ix >= 0) {
          T* dcol = detail::scratch<T>(4, geom.patch() * geom.ncols());
          detail::gemm_dx(geom, dw->data(), dyt, dcol);
          const long xn = static_cast<long>(geom.batch) * geom.cin * geom.h * geom.w;
          T* dxb = detail::scratch<T>(5, xn);
          std::fill(dxb, dxb + xn, T(0));
          detail::col2im(geom, dcol, dxb);
          auto& buf = gg.grad_buf(ix);
          for (long i = 0; i < xn; ++i) buf[static_cast<size_t>(i)] += dxb[i];
        }
        if (ib >= 0) {
          auto& buf = gg.grad_buf(ib);
          const long hwo = static_cast<long>(geom.ho) * geom.wo;
          for (int bb = 0; bb < geom.batch; ++bb)
            for (int m = 0; m < geom.cout; ++m) {
              const T* row = go.data() + (static_cast<long>(bb) * geom.cout + m) * hwo;
              T s = T(0);
              for (long j = 0; j < hwo; ++j) s += row[j];
              buf[static_cast<size_t>(m)] += s;
            }
        }
      });
  return out;
}

// Same-padded 2-d convolution; x is (b, cin, h, w), w is (cout, cin, k, k),
// bias may be an empty tensor. Output spatial size is ceil(h/stride).
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride = 1, int dilation = 1) {
  check(w.rank() == 4, "conv: weight must be 4-d, got " + shape_str(w.shape));
  const auto pm = build_patches(x, w.dim(2), stride, dilation);
  return conv2d_on(g, pm, x, w, b);
}

// Transposed convolution: the linear map whose Jacobian is the transpose of
// the matching conv2d (weights shared in (cout, cin, k, k) layout where cout
// is the channel count of `u`). Target spatial size must satisfy
// ceil(size/stride) == input size; it defaults to stride * input size.
template <typename T>
Tensor<T> conv2d_transpose(Graph<T>& g, const Tensor<T>& u, const Tensor<T>& w, const Tensor<T>& b,
                           int stride, int out_h = 0, int out_w = 0) {
  check(u.rank() == 4, "conv2d_transpose: input must be 4-d, got " + shape_str(u.shape));
  check(w.rank() == 4, "conv2d_transpose: weight must be 4-d, got " + shape_str(w.shape));
  check(u.dim(1) == w.dim(0), "conv2d_transpose: input channels " + std::to_string(u.dim(1)) +
                                  " do not match weight rows " + std::to_string(w.dim(0)));
  if (out_h == 0) out_h = u.dim(2) * stride;
  if (out_w == 0) out_w = u.dim(3) * stride;
  const Shape x_shape{u.dim(0), w.dim(1), out_h, out_w};
  const detail::ConvGeom geom = detail::conv_geom(x_shape, w.shape, stride, 1);
  check(geom.ho == u.dim(2) && geom.wo == u.dim(3),
        "conv2d_transpose: target size " + std::to_string(out_h) + "x" + std::to_string(out_w) +
            " is inconsistent with input " + shape_str(u.shape) + " at stride " + std::to_string(stride));

  const long kn = geom.patch() * geom.ncols();
  const long mn = geom.cout * geom.ncols();
  T* ut = detail::scratch<T>(0, mn);
  detail::gather_chw_to_cols(geom, u.ptr(), ut);
  T* col = detail::scratch<T>(1, kn);
  detail::gemm_dx(geom, w.ptr(), ut, col);
  Tensor<T> out = Tensor<T>::zeros(x_shape);
  detail::col2im(geom, col, out.ptr());
  detail::add_bias_chw(b, geom.cin, static_cast<long>(out_h) * out_w, out);

  detail::attach<T>(
      g, out, {&u, &w, &b},
      [geom, kn, mn, iu = u.node, iw = w.node, ib = b.node, du = u.data, dw = w.data](Graph<T>& gg,
                                                                                      int self) {
        const auto& go = gg.grad_buf(self);
        T* gcol = detail::scratch<T>(2, kn);
        detail::im2col(geom, go.data(), gcol);
        if (iu >= 0) {
          T* dut = detail::scratch<T>(3, mn);
          detail::gemm_forward(geom, dw->data(), gcol, dut);
          const long un = static_cast<long>(geom.batch) * geom.cout * geom.ho * geom.wo;
          T* dub = detail::scratch<T>(4, un);
          detail::scatter_cols_to_chw(geom, dut, dub);
          auto& buf = gg.grad_buf(iu);
          for (long i = 0; i < un; ++i) buf[static_cast<size_t>(i)] += dub[i];
        }
        if (iw >= 0) {
          T* ut = detail::scratch<T>(5, mn);
          detail::gather_chw_to_cols(geom, du->data(), ut);
          detail::gemm_dw(geom, ut, gcol, gg.grad_buf(iw).data());
        }
        if (ib >= 0) {
          auto& buf = gg.grad_buf(ib);
          const long hw = static_cast<long>(geom.h) * geom.w;
          for (int bb = 0; bb < geom.batch; ++bb)
            for (int c = 0; c < geom.cin; ++c) {
              const T* row = go.data() + (static_cast<long>(bb) * geom.cin + c) * hw;
              T s = T(0);
              for (long j = 0; j < hw; ++j) s += row[j];
              buf[static_cast<size_t>(c)] += s;
            }
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// recurrent unit

// Convolutional GRU gate weights; gates are kxk convolutions over the
// concatenated (features, state) map.
template <typename T>
struct GruParams {
  Tensor<T> w_update, b_update;
  Tensor<T> w_reset, b_reset;
  Tensor<T> w_cand, b_cand;
  int dilation = 1;
};

// One GRU step: update/reset gates with sigmoid, tanh candidate,
// s' = s + u (c - s). Output elements stay in (-1, 1) for states that
// start there.
template <typename T>
Tensor<T> gru_step(Graph<T>& g, const Tensor<T>& features, const Tensor<T>& state,
                   const GruParams<T>& p) {
  check(features.rank() == 4 && state.rank() == 4 && features.dim(0) == state.dim(0) &&
            features.dim(2) == state.dim(2) && features.dim(3) == state.dim(3),
        "gru_step: features " + shape_str(features.shape) + " and state " + shape_str(state.shape) +
            " must share batch and spatial dims");
  auto joint = concat_channels(g, features, state);
  // the update and reset gates share one patch matrix over `joint`
  const auto jp = build_patches(joint, p.w_update.dim(2), 1, p.dilation);
  auto u = sigmoid(g, conv2d_on(g, jp, joint, p.w_update, p.b_update));
  auto r = sigmoid(g, conv2d_on(g, jp, joint, p.w_reset, p.b_reset));
  auto gated = concat_channels(g, features, mul(g, r, state));
  auto c = tanh(g, conv2d(g, gated, p.w_cand, p.b_cand, 1, p.dilation));
  return add(g, state, mul(g, u, sub(g, c, state)));
}

}  // namespace rim
