// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "rim/operators.hpp"
#include "rim/ops.hpp"
#include "rim/rng.hpp"
#include "rim/tensor.hpp"

namespace rim {

// A measurement y = A x + sigma * z with isotropic Gaussian z, optionally
// snapped to the 8-bit pixel lattice.
template <typename T>
struct Observation {
  Tensor<T> y;
  double sigma = 0.0;
  bool quantized = false;
  OpDescriptor op_ref;
};

template <typename T>
Tensor<T> quantize_8bit(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = x.size();
  for (long i = 0; i < n; ++i) {
    const double c = std::min(std::max(static_cast<double>(px[i]), 0.0), 1.0);
    po[i] = static_cast<T>(static_cast<double>(std::lround(c * 255.0)) / 255.0);
  }
  return out;
}

// Simulates a measurement of x_true (values in [0, 1]). Quantization is only
// defined where the measurement domain is pixel-valued, i.e. denoising.
template <typename T>
Observation<T> observe(const LinearOperator<T>& op, const Tensor<T>& x_true, double sigma,
                       uint64_t seed, bool quantize = false) {
  check(sigma >= 0.0, "observe: sigma must be >= 0, got " + std::to_string(sigma));
  check(!quantize || op.kind == OpKind::identity,
        "observe: 8-bit quantization requires a pixel-valued measurement domain (identity operator)");
  for (long i = 0; i < x_true.size(); ++i) {
    const double v = static_cast<double>((*x_true.data)[static_cast<size_t>(i)]);
    check(v >= 0.0 && v <= 1.0, "observe: signal values must lie in [0, 1]");
  }
  Observation<T> obs;
  obs.sigma = sigma;
  obs.quantized = quantize;
  obs.op_ref = op.descriptor();
  obs.y = apply_raw(op, x_true);
  if (sigma > 0.0) {
    Rng rng(seed);
    for (auto& v : *obs.y.data) v = static_cast<T>(static_cast<double>(v) + sigma * rng.normal());
  }
  if (quantize) obs.y = quantize_8bit(obs.y);
  return obs;
}

// Trainable gradient stabiliser epsilon = softplus(phi_eps) > 0.
template <typename T>
Tensor<T> make_eps(Graph<T>& g, const Tensor<T>& phi_eps) {
  check(phi_eps.size() == 1, "make_eps: phi_eps must be scalar, shape " + shape_str(phi_eps.shape));
  return softplus(g, phi_eps);
}

// Gradient of the Gaussian log-likelihood in signal space:
//   A^T (y - A x) / (sigma^2 + eps).
// eps enters as a (possibly tracked) scalar tensor so it can train.
template <typename T>
Tensor<T> grad_loglik_x(Graph<T>& g, const LinearOperator<T>& op, const Observation<T>& obs,
                        const Tensor<T>& x, const Tensor<T>& eps) {
  check(eps.size() == 1, "grad_loglik_x: eps must be scalar");
  check(eps.node >= 0 || eps.item() > T(0), "grad_loglik_x: eps must be positive");
  auto residual = sub(g, obs.y, apply(g, op, x));
  auto coeff = recip(g, add_const(g, eps, static_cast<T>(obs.sigma * obs.sigma)));
  return scale_by(g, adjoint(g, op, residual), coeff);
}

template <typename T>
Tensor<T> grad_loglik_x(Graph<T>& g, const LinearOperator<T>& op, const Observation<T>& obs,
                        const Tensor<T>& x, double eps) {
  return grad_loglik_x(g, op, obs, x, Tensor<T>::scalar(static_cast<T>(eps)));
}

// Logistic-sigmoid link between the unconstrained iterate and (0, 1) pixels.
template <typename T>
Tensor<T> link_forward(Graph<T>& g, const Tensor<T>& eta) {
  return sigmoid(g, eta);
}

// Psi'(eta) = x (1 - x), written in terms of x = Psi(eta).
template <typename T>
Tensor<T> link_deriv_from_x(Graph<T>& g, const Tensor<T>& x) {
  return mul(g, x, add_const(g, scale(g, x, T(-1)), T(1)));
}

template <typename T>
Tensor<T> link_deriv(Graph<T>& g, const Tensor<T>& eta) {
  return link_deriv_from_x(g, link_forward(g, eta));
}

// Inverse link on values clamped into [delta, 1 - delta]; used only to build
// initial iterates, so it stays off the graph.
template <typename T>
Tensor<T> link_inverse(const Tensor<T>& x, double delta = 1e-3) {
  check(delta > 0.0 && delta < 0.5, "link_inverse: clamp margin must be in (0, 0.5)");
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  const long n = x.size();
  for (long i = 0; i < n; ++i) {
    const double c = std::min(std::max(static_cast<double>(px[i]), delta), 1.0 - delta);
    po[i] = static_cast<T>(std::log(c) - std::log1p(-c));
  }
  return out;
}

// Chain rule of the log-likelihood through the link:
//   Psi'(eta) .* grad_loglik_x(Psi(eta)).
// With x_space set, the raw signal-space gradient is fed instead (ablation).
template <typename T>
Tensor<T> grad_loglik_eta(Graph<T>& g, const LinearOperator<T>& op, const Observation<T>& obs,
                          const Tensor<T>& eta, const Tensor<T>& eps, bool x_space = false) {
  auto x = link_forward(g, eta);
  auto gx = grad_loglik_x(g, op, obs, x, eps);
  if (x_space) return gx;
  return mul(g, link_deriv_from_x(g, x), gx);
}

}  // namespace rim
