// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rim/ops.hpp"
#include "rim/rng.hpp"
#include "rim/tensor.hpp"

namespace rim {

enum class OpKind { identity, mask, gaussian, bernoulli, fourier, bicubic };

inline const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::identity: return "identity";
    case OpKind::mask: return "mask";
    case OpKind::gaussian: return "gaussian";
    case OpKind::bernoulli: return "bernoulli";
    case OpKind::fourier: return "fourier";
    case OpKind::bicubic: return "bicubic";
  }
  return "?";
}

// Compact serializable description: {kind, p or m or factor, seed}. For the
// random ensembles m may be given directly or derived as round(p*d).
struct OpDescriptor {
  OpKind kind = OpKind::identity;
  double p = 1.0;
  int m = 0;
  int factor = 2;
  uint64_t seed = 0;
};

namespace detail {

// Keys bicubic kernel, a = -0.5.
inline double keys_cubic(double t) {
  const double a = std::abs(t);
  if (a <= 1.0) return 1.5 * a * a * a - 2.5 * a * a + 1.0;
  if (a < 2.0) return -0.5 * a * a * a + 2.5 * a * a - 4.0 * a + 2.0;
  return 0.0;
}

struct BicubicTaps {
  int start = 0;
  std::vector<double> w;
};

// 1-d anti-aliased downsampling weights: the kernel is stretched by the
// scale factor, boundary taps are folded onto the edge sample, and every
// row is normalised to sum to one.
inline std::vector<BicubicTaps> bicubic_taps(int in, int factor) {
  const double f = static_cast<double>(factor);
  const int out = in / factor;
  std::vector<BicubicTaps> taps(static_cast<size_t>(out));
  for (int i = 0; i < out; ++i) {
    const double u = (i + 0.5) * f - 0.5;
    const int lo = static_cast<int>(std::ceil(u - 2.0 * f));
    const int hi = static_cast<int>(std::floor(u + 2.0 * f));
    const int clo = std::max(lo, 0);
    const int chi = std::min(hi, in - 1);
    BicubicTaps t;
    t.start = clo;
    t.w.assign(static_cast<size_t>(chi - clo + 1), 0.0);
    double total = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double wv = keys_cubic((u - j) / f) / f;
      const int jc = std::min(std::max(j, 0), in - 1);
      t.w[static_cast<size_t>(jc - clo)] += wv;
      total += wv;
    }
    for (double& wv : t.w) wv /= total;
    taps[static_cast<size_t>(i)] = t;
  }
  return taps;
}

}  // namespace detail

// A linear forward model A acting per channel on the spatial domain, with an
// exact adjoint. Dense ensembles keep an explicit (rows x d) matrix; masks
// keep the drawn coordinate list; resamplers keep separable tap tables.
// Immutable after construction.
template <typename T>
struct LinearOperator {
  OpKind kind = OpKind::identity;
  Shape input_shape;   // {c, h, w}
  Shape output_shape;  // {c, hm, wm}
  uint64_t seed = 0;
  double p = 1.0;
  int factor = 1;

  long d = 0;     // signal dim per channel
  long rows = 0;  // measurement dim per channel

  std::vector<T> dense;  // rows x d, row-major
  std::vector<int> keep;
  std::vector<detail::BicubicTaps> taps_h, taps_w;

  OpDescriptor descriptor() const {
    OpDescriptor desc;
    desc.kind = kind;
    desc.p = p;
    desc.m = (kind == OpKind::gaussian || kind == OpKind::bernoulli) ? static_cast<int>(rows) : 0;
    desc.factor = factor;
    desc.seed = seed;
    return desc;
  }

  // One (batch, channel) slice, x length d -> y length rows.
  void apply_slice(const T* x, T* y) const {
    switch (kind) {
      case OpKind::identity:
        std::copy(x, x + d, y);
        break;
      case OpKind::mask:
        for (long i = 0; i < rows; ++i) y[i] = x[keep[static_cast<size_t>(i)]];
        break;
      case OpKind::gaussian:
      case OpKind::bernoulli:
      case OpKind::fourier: {
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
            dense.data(), rows, d);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x, d);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(y, rows);
        yv.noalias() = a * xv;
        break;
      }
      case OpKind::bicubic: {
        const int h = input_shape[1], w = input_shape[2];
        const int ho = output_shape[1], wo = output_shape[2];
        std::vector<T> tmp(static_cast<size_t>(ho) * w, T(0));
        for (int oy = 0; oy < ho; ++oy) {
          const auto& th = taps_h[static_cast<size_t>(oy)];
          for (size_t j = 0; j < th.w.size(); ++j) {
            const T wv = static_cast<T>(th.w[j]);
            const T* row = x + static_cast<long>(th.start + static_cast<int>(j)) * w;
            T* dst = tmp.data() + static_cast<long>(oy) * w;
            for (int c = 0; c < w; ++c) dst[c] += wv * row[c];
          }
        }
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const auto& tw = taps_w[static_cast<size_t>(ox)];
            T s = T(0);
            for (size_t j = 0; j < tw.w.size(); ++j)
              s += static_cast<T>(tw.w[j]) * tmp[static_cast<size_t>(oy) * w + tw.start + static_cast<int>(j)];
            y[static_cast<long>(oy) * wo + ox] = s;
          }
        (void)h;
        break;
      }
    }
  }

  void adjoint_slice(const T* y, T* x) const {
    switch (kind) {
      case OpKind::identity:
        std::copy(y, y + rows, x);
        break;
      case OpKind::mask:
        std::fill(x, x + d, T(0));
        for (long i = 0; i < rows; ++i) x[keep[static_cast<size_t>(i)]] = y[i];
        break;
      case OpKind::gaussian:
      case OpKind::bernoulli:
      case OpKind::fourier: {
        // row-major (rows x d) viewed column-major is exactly the transpose
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>> at(dense.data(), d, rows);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(y, rows);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x, d);
        xv.noalias() = at * yv;
        break;
      }
      case OpKind::bicubic: {
        const int w = input_shape[2];
        const int ho = output_shape[1], wo = output_shape[2];
        std::vector<T> tmp(static_cast<size_t>(ho) * w, T(0));
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const auto& tw = taps_w[static_cast<size_t>(ox)];
            const T v = y[static_cast<long>(oy) * wo + ox];
            for (size_t j = 0; j < tw.w.size(); ++j)
              tmp[static_cast<size_t>(oy) * w + tw.start + static_cast<int>(j)] += static_cast<T>(tw.w[j]) * v;
          }
        std::fill(x, x + d, T(0));
        for (int oy = 0; oy < ho; ++oy) {
          const auto& th = taps_h[static_cast<size_t>(oy)];
          for (size_t j = 0; j < th.w.size(); ++j) {
            const T wv = static_cast<T>(th.w[j]);
            T* dst = x + static_cast<long>(th.start + static_cast<int>(j)) * w;
            const T* src = tmp.data() + static_cast<long>(oy) * w;
            for (int c = 0; c < w; ++c) dst[c] += wv * src[c];
          }
        }
        break;
      }
    }
  }
};

namespace detail {

constexpr long kMaxDenseElems = 1L << 26;

inline void check_signal_shape(const Shape& s) {
  check(s.size() == 3, "operator: signal shape must be {c, h, w}, got " + shape_str(s));
  for (int v : s) check(v >= 1, "operator: non-positive extent in " + shape_str(s));
}

template <typename T>
LinearOperator<T> base_op(OpKind kind, const Shape& chw) {
  check_signal_shape(chw);
  LinearOperator<T> op;
  op.kind = kind;
  op.input_shape = chw;
  op.d = static_cast<long>(chw[1]) * chw[2];
  return op;
}

}  // namespace detail

template <typename T>
LinearOperator<T> make_identity(const Shape& chw) {
  auto op = detail::base_op<T>(OpKind::identity, chw);
  op.rows = op.d;
  op.output_shape = chw;
  return op;
}

// Keeps round(p*d) uniformly random coordinates without replacement; the
// measurement is the kept subvector.
template <typename T>
LinearOperator<T> make_mask(const Shape& chw, double p, uint64_t seed) {
  check(p > 0.0 && p <= 1.0, "make_mask: keep fraction must be in (0, 1], got " + std::to_string(p));
  auto op = detail::base_op<T>(OpKind::mask, chw);
  op.p = p;
  op.seed = seed;
  const long m = std::lround(p * static_cast<double>(op.d));
  check(m >= 1, "make_mask: empty measurement");
  Rng rng(seed);
  op.keep = rng.sample_without_replacement(static_cast<int>(op.d), static_cast<int>(m));
  op.rows = m;
  op.output_shape = {chw[0], static_cast<int>(m), 1};
  return op;
}

namespace detail {

template <typename T>
void finish_dense(LinearOperator<T>& op, long m) {
  check(m >= 1, "ensemble: m must be >= 1, got " + std::to_string(m));
  check(m * op.d <= kMaxDenseElems,
        "ensemble: " + std::to_string(m) + "x" + std::to_string(op.d) + " exceeds the dense budget");
  op.rows = m;
  op.output_shape = {op.input_shape[0], static_cast<int>(m), 1};
  op.dense.resize(static_cast<size_t>(m * op.d));
}

}  // namespace detail

// Dense i.i.d. N(0, 1) ensemble scaled by 1/sqrt(d).
template <typename T>
LinearOperator<T> make_gaussian_ensemble(const Shape& chw, long m, uint64_t seed) {
  auto op = detail::base_op<T>(OpKind::gaussian, chw);
  op.seed = seed;
  detail::finish_dense(op, m);
  op.p = static_cast<double>(m) / static_cast<double>(op.d);
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(op.d));
  for (auto& v : op.dense) v = static_cast<T>(rng.normal() * s);
  return op;
}

// Dense +-1 ensemble (fair coin), scaled by 1/sqrt(d).
template <typename T>
LinearOperator<T> make_bernoulli_ensemble(const Shape& chw, long m, uint64_t seed) {
  auto op = detail::base_op<T>(OpKind::bernoulli, chw);
  op.seed = seed;
  detail::finish_dense(op, m);
  op.p = static_cast<double>(m) / static_cast<double>(op.d);
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(op.d));
  for (auto& v : op.dense) v = static_cast<T>((rng.uniform01() < 0.5 ? -1.0 : 1.0) * s);
  return op;
}

// round(p*d) distinct rows of the unitary d-point DFT matrix, realified by
// interleaving real and imaginary parts (2*round(p*d) output rows).
template <typename T>
LinearOperator<T> make_fourier_ensemble(const Shape& chw, double p, uint64_t seed) {
  check(p > 0.0 && p <= 1.0, "make_fourier_ensemble: p must be in (0, 1], got " + std::to_string(p));
  auto op = detail::base_op<T>(OpKind::fourier, chw);
  op.seed = seed;
  op.p = p;
  const long m = std::lround(p * static_cast<double>(op.d));
  check(m >= 1, "make_fourier_ensemble: empty row set");
  detail::finish_dense(op, 2 * m);
  Rng rng(seed);
  op.keep = rng.sample_without_replacement(static_cast<int>(op.d), static_cast<int>(m));
  const auto& freq = op.keep;
  const double s = 1.0 / std::sqrt(static_cast<double>(op.d));
  const double w0 = 2.0 * M_PI / static_cast<double>(op.d);
  for (long i = 0; i < m; ++i) {
    const double f = static_cast<double>(freq[static_cast<size_t>(i)]);
    T* re = op.dense.data() + (2 * i) * op.d;
    T* im = op.dense.data() + (2 * i + 1) * op.d;
    for (long j = 0; j < op.d; ++j) {
      const double a = w0 * f * static_cast<double>(j);
      re[j] = static_cast<T>(std::cos(a) * s);
      im[j] = static_cast<T>(-std::sin(a) * s);
    }
  }
  return op;
}

// Separable anti-aliased bicubic downsampling; the adjoint is the exact
// transpose of the tap map.
template <typename T>
LinearOperator<T> make_bicubic_downsample(const Shape& chw, int factor) {
  check(factor == 2 || factor == 3 || factor == 4,
        "make_bicubic_downsample: factor must be 2, 3 or 4, got " + std::to_string(factor));
  auto op = detail::base_op<T>(OpKind::bicubic, chw);
  check(chw[1] % factor == 0 && chw[2] % factor == 0,
        "make_bicubic_downsample: " + std::to_string(chw[1]) + "x" + std::to_string(chw[2]) +
            " not divisible by factor " + std::to_string(factor));
  op.factor = factor;
  op.taps_h = detail::bicubic_taps(chw[1], factor);
  op.taps_w = detail::bicubic_taps(chw[2], factor);
  op.output_shape = {chw[0], chw[1] / factor, chw[2] / factor};
  op.rows = static_cast<long>(op.output_shape[1]) * op.output_shape[2];
  return op;
}

// Builds the operator a descriptor denotes at a given signal shape.
template <typename T>
LinearOperator<T> make_operator(const OpDescriptor& desc, const Shape& chw) {
  switch (desc.kind) {
    case OpKind::identity: return make_identity<T>(chw);
    case OpKind::mask: return make_mask<T>(chw, desc.p, desc.seed);
    case OpKind::gaussian: {
      const long d = static_cast<long>(chw[1]) * chw[2];
      const long m = desc.m > 0 ? desc.m : std::lround(desc.p * static_cast<double>(d));
      return make_gaussian_ensemble<T>(chw, m, desc.seed);
    }
    case OpKind::bernoulli: {
      const long d = static_cast<long>(chw[1]) * chw[2];
      const long m = desc.m > 0 ? desc.m : std::lround(desc.p * static_cast<double>(d));
      return make_bernoulli_ensemble<T>(chw, m, desc.seed);
    }
    case OpKind::fourier: return make_fourier_ensemble<T>(chw, desc.p, desc.seed);
    case OpKind::bicubic: return make_bicubic_downsample<T>(chw, desc.factor);
  }
  throw std::invalid_argument("make_operator: unknown kind");
}

namespace detail {

template <typename T>
void check_op_input(const LinearOperator<T>& op, const Tensor<T>& x) {
  check(x.rank() == 4, "apply: input must be 4-d, got " + shape_str(x.shape));
  check(x.dim(2) == op.input_shape[1] && x.dim(3) == op.input_shape[2],
        "apply: spatial dims " + shape_str(x.shape) + " do not match operator " +
            shape_str(op.input_shape));
}

template <typename T>
void check_op_output(const LinearOperator<T>& op, const Tensor<T>& y) {
  check(y.rank() == 4, "adjoint: input must be 4-d, got " + shape_str(y.shape));
  check(y.dim(2) == op.output_shape[1] && y.dim(3) == op.output_shape[2],
        "adjoint: measurement dims " + shape_str(y.shape) + " do not match operator " +
            shape_str(op.output_shape));
}

}  // namespace detail

// Measurement of a (b, c, h, w) signal: the operator acts on every
// (batch, channel) slice independently, giving (b, c, hm, wm).
template <typename T>
Tensor<T> apply_raw(const LinearOperator<T>& op, const Tensor<T>& x) {
  detail::check_op_input(op, x);
  const int bc = x.dim(0) * x.dim(1);
  Tensor<T> y = Tensor<T>::zeros({x.dim(0), x.dim(1), op.output_shape[1], op.output_shape[2]});
  for (int i = 0; i < bc; ++i) op.apply_slice(x.ptr() + i * op.d, y.ptr() + i * op.rows);
  return y;
}

template <typename T>
Tensor<T> adjoint_raw(const LinearOperator<T>& op, const Tensor<T>& y) {
  detail::check_op_output(op, y);
  const int bc = y.dim(0) * y.dim(1);
  Tensor<T> x = Tensor<T>::zeros({y.dim(0), y.dim(1), op.input_shape[1], op.input_shape[2]});
  for (int i = 0; i < bc; ++i) op.adjoint_slice(y.ptr() + i * op.rows, x.ptr() + i * op.d);
  return x;
}

// Differentiable wrappers: the backward of a linear map is its adjoint.
// The operator is captured by reference and must outlive the graph.
template <typename T>
Tensor<T> apply(Graph<T>& g, const LinearOperator<T>& op, const Tensor<T>& x) {
  Tensor<T> y = apply_raw(op, x);
  detail::attach<T>(g, y, {&x}, [&op, ix = x.node, xs = x.shape](Graph<T>& gg, int self) {
    if (ix < 0) return;
    const auto& go = gg.grad_buf(self);
    auto& buf = gg.grad_buf(ix);
    const int bc = xs[0] * xs[1];
    std::vector<T> slice(static_cast<size_t>(op.d));
    for (int i = 0; i < bc; ++i) {
      op.adjoint_slice(go.data() + i * op.rows, slice.data());
      T* dst = buf.data() + i * op.d;
      for (long j = 0; j < op.d; ++j) dst[j] += slice[static_cast<size_t>(j)];
    }
  });
  return y;
}

template <typename T>
Tensor<T> adjoint(Graph<T>& g, const LinearOperator<T>& op, const Tensor<T>& y) {
  Tensor<T> x = adjoint_raw(op, y);
  detail::attach<T>(g, x, {&y}, [&op, iy = y.node, ys = y.shape](Graph<T>& gg, int self) {
    if (iy < 0) return;
    const auto& go = gg.grad_buf(self);
    auto& buf = gg.grad_buf(iy);
    const int bc = ys[0] * ys[1];
    std::vector<T> slice(static_cast<size_t>(op.rows));
    for (int i = 0; i < bc; ++i) {
      op.apply_slice(go.data() + i * op.d, slice.data());
      T* dst = buf.data() + i * op.rows;
      for (long j = 0; j < op.rows; ++j) dst[j] += slice[static_cast<size_t>(j)];
    }
  });
  return x;
}

}  // namespace rim
