// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rim/likelihood.hpp"
#include "rim/rng.hpp"
#include "rim/tensor.hpp"

namespace rim {

// Per-image scores plus bootstrap aggregates.
struct MetricReport {
  std::vector<std::string> ids;
  std::vector<double> psnr;
  std::vector<double> ssim;
  double psnr_mean = 0.0, psnr_sem = 0.0;
  double ssim_mean = 0.0, ssim_sem = 0.0;
};

// 10 log10(max^2 / mse); identical inputs report +inf.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& ref, double max_val = 1.0) {
  check(x.shape == ref.shape, "psnr: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(ref.shape));
  double ss = 0.0;
  const long n = x.size();
  for (long i = 0; i < n; ++i) {
    const double d = static_cast<double>((*x.data)[static_cast<size_t>(i)]) -
                     static_cast<double>((*ref.data)[static_cast<size_t>(i)]);
    ss += d * d;
  }
  const double mse = ss / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size) * size);
  const int half = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double dy = i - half, dx = j - half;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<size_t>(i * size + j)] = v;
      total += v;
    }
  for (double& v : w) v /= total;
  return w;
}

// Windowed SSIM of one channel, valid positions only.
inline double ssim_channel(const double* a, const double* b, int h, int w) {
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (0.01 L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;
  static const std::vector<double> win = gaussian_window(kWin, kSigma);
  check(h >= kWin && w >= kWin, "ssim: image smaller than the 11x11 window");
  double acc = 0.0;
  long count = 0;
  for (int oy = 0; oy + kWin <= h; ++oy)
    for (int ox = 0; ox + kWin <= w; ++ox) {
      double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double wv = win[static_cast<size_t>(i * kWin + j)];
          const double pa = a[(oy + i) * w + (ox + j)];
          const double pb = b[(oy + i) * w + (ox + j)];
          ma += wv * pa;
          mb += wv * pb;
          va += wv * pa * pa;
          vb += wv * pb * pb;
          cov += wv * pa * pb;
        }
      va -= ma * ma;
      vb -= mb * mb;
      cov -= ma * mb;
      const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
      const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
      acc += num / den;
      ++count;
    }
  return acc / static_cast<double>(count);
}

}  // namespace detail

// Mean local SSIM (Gaussian window 11, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2,
// L = 1), averaged per channel. Accepts (c, h, w) or (1, c, h, w) layouts.
template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& ref) {
  check(x.shape == ref.shape, "ssim: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(ref.shape));
  check(x.rank() >= 2, "ssim: need at least 2-d input, got " + shape_str(x.shape));
  const int w = x.dim(x.rank() - 1);
  const int h = x.dim(x.rank() - 2);
  const long channels = x.size() / (static_cast<long>(h) * w);
  std::vector<double> a(static_cast<size_t>(h) * w), b(static_cast<size_t>(h) * w);
  double acc = 0.0;
  for (long c = 0; c < channels; ++c) {
    const T* pa = x.ptr() + c * h * w;
    const T* pb = ref.ptr() + c * h * w;
    for (long i = 0; i < static_cast<long>(h) * w; ++i) {
      a[static_cast<size_t>(i)] = static_cast<double>(pa[i]);
      b[static_cast<size_t>(i)] = static_cast<double>(pb[i]);
    }
    acc += detail::ssim_channel(a.data(), b.data(), h, w);
  }
  return acc / static_cast<double>(channels);
}

// Standard deviation of resampled means, seeded and deterministic.
inline double bootstrap_sem(const std::vector<double>& values, int n_resamples, uint64_t seed) {
  check(values.size() >= 2, "bootstrap_sem: need at least 2 values, got " + std::to_string(values.size()));
  check(n_resamples >= 2, "bootstrap_sem: need at least 2 resamples");
  Rng rng(seed);
  const size_t n = values.size();
  std::vector<double> means(static_cast<size_t>(n_resamples));
  for (int r = 0; r < n_resamples; ++r) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += values[rng.below(n)];
    means[static_cast<size_t>(r)] = s / static_cast<double>(n);
  }
  double mean = 0.0;
  for (double m : means) mean += m;
  mean /= static_cast<double>(n_resamples);
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  return std::sqrt(var / static_cast<double>(n_resamples - 1));
}

}  // namespace rim
