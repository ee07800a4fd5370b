// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rim/likelihood.hpp"
#include "rim/operators.hpp"
#include "rim/ops.hpp"
#include "rim/rng.hpp"

namespace rim {

// standard: stride-2 encoder, recurrent trunk at half resolution, transposed
//           decoder back to full resolution.
// dilated:  full-resolution stack with dilations (1, 2, 4, 1), no resampling.
enum class Variant { standard, dilated };

// rim: gradient and current estimate in, recurrent state kept.
// gdn: gradient only in, recurrent state kept.
// ffn: gradient and estimate in, recurrent unit swapped for a relu conv.
enum class CellKind { rim, gdn, ffn };

struct ModelConfig {
  Variant variant = Variant::standard;
  CellKind cell = CellKind::rim;
  int channels = 1;
  int feat_in = 64;
  int feat_state = 256;
  int feat_out = 64;
  // feed the signal-space likelihood gradient instead of the chain-ruled
  // eta-space one (ablation switch)
  bool x_space_grad = false;

  int input_channels() const { return cell == CellKind::gdn ? channels : 2 * channels; }
  int encode_stride() const { return variant == Variant::standard ? 2 : 1; }
  int trunk_dilation() const { return variant == Variant::standard ? 1 : 2; }
  int decode_dilation() const { return variant == Variant::standard ? 1 : 4; }

  bool operator==(const ModelConfig&) const = default;
};

// Full-resolution dilated stack sized to land near half a million parameters.
inline ModelConfig dilated_default(int channels = 1) {
  ModelConfig cfg;
  cfg.variant = Variant::dilated;
  cfg.feat_in = 64;
  cfg.feat_state = 96;
  cfg.feat_out = 64;
  cfg.channels = channels;
  return cfg;
}

// Small widths for fast CPU training runs.
inline ModelConfig desk_config(int channels = 1, CellKind cell = CellKind::rim) {
  ModelConfig cfg;
  cfg.cell = cell;
  cfg.channels = channels;
  cfg.feat_in = 16;
  cfg.feat_state = 64;
  cfg.feat_out = 16;
  return cfg;
}

// Learnable parameters of one cell. All layers are 3x3 convolutions, so the
// same parameters run at any image size.
template <typename T>
struct RimParams {
  ModelConfig config;
  Tensor<T> w_in, b_in;        // encoder conv
  Tensor<T> w_gate_u, b_gate_u;  // recurrent gates (rim / gdn)
  Tensor<T> w_gate_r, b_gate_r;
  Tensor<T> w_cand, b_cand;
  Tensor<T> w_ffn, b_ffn;      // relu trunk (ffn)
  Tensor<T> w_up, b_up;        // decoder (transposed conv / dilated conv)
  Tensor<T> w_out, b_out;      // output conv
  Tensor<T> phi_eps;           // gradient stabiliser parameter

  // Enumerates used parameters in a fixed order.
  template <typename Fn>
  void visit(Fn&& fn) {
    fn("w_in", w_in);
    fn("b_in", b_in);
    if (config.cell == CellKind::ffn) {
      fn("w_ffn", w_ffn);
      fn("b_ffn", b_ffn);
    } else {
      fn("w_gate_u", w_gate_u);
      fn("b_gate_u", b_gate_u);
      fn("w_gate_r", w_gate_r);
      fn("b_gate_r", b_gate_r);
      fn("w_cand", w_cand);
      fn("b_cand", b_cand);
    }
    fn("w_up", w_up);
    fn("b_up", b_up);
    fn("w_out", w_out);
    fn("b_out", b_out);
    fn("phi_eps", phi_eps);
  }

  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<RimParams*>(this)->visit([&](const std::string& name, const Tensor<T>& t) { fn(name, t); });
  }

  long param_count() const {
    long n = 0;
    visit([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  GruParams<T> gru() const {
    GruParams<T> p;
    p.w_update = w_gate_u;
    p.b_update = b_gate_u;
    p.w_reset = w_gate_r;
    p.b_reset = b_gate_r;
    p.w_cand = w_cand;
    p.b_cand = b_cand;
    p.dilation = config.trunk_dilation();
    return p;
  }
};

// Deterministic fan-in-scaled uniform init; biases and phi_eps start at zero.
template <typename T>
RimParams<T> rim_init(const ModelConfig& cfg, uint64_t seed) {
  check(cfg.channels >= 1 && cfg.feat_in >= 1 && cfg.feat_state >= 1 && cfg.feat_out >= 1,
        "rim_init: widths and channels must be positive");
  Rng rng(seed);
  auto conv_w = [&](int out, int in) {
    auto t = Tensor<T>::zeros({out, in, 3, 3});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in) * 9.0);
    for (auto& v : *t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
  };
  RimParams<T> p;
  p.config = cfg;
  const int cin = cfg.input_channels();
  p.w_in = conv_w(cfg.feat_in, cin);
  p.b_in = Tensor<T>::zeros({cfg.feat_in});
  const int joint = cfg.feat_in + cfg.feat_state;
  p.w_gate_u = conv_w(cfg.feat_state, joint);
  p.b_gate_u = Tensor<T>::zeros({cfg.feat_state});
  p.w_gate_r = conv_w(cfg.feat_state, joint);
  p.b_gate_r = Tensor<T>::zeros({cfg.feat_state});
  p.w_cand = conv_w(cfg.feat_state, joint);
  p.b_cand = Tensor<T>::zeros({cfg.feat_state});
  p.w_ffn = conv_w(cfg.feat_state, cfg.feat_in);
  p.b_ffn = Tensor<T>::zeros({cfg.feat_state});
  if (cfg.variant == Variant::standard) {
    // transposed conv weights live in (in=state, out, k, k) layout
    auto t = Tensor<T>::zeros({cfg.feat_state, cfg.feat_out, 3, 3});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.feat_state) * 9.0);
    for (auto& v : *t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    p.w_up = t;
  } else {
    p.w_up = conv_w(cfg.feat_out, cfg.feat_state);
  }
  p.b_up = Tensor<T>::zeros({cfg.feat_out});
  p.w_out = conv_w(cfg.channels, cfg.feat_out);
  p.b_out = Tensor<T>::zeros({cfg.channels});
  p.phi_eps = Tensor<T>::zeros({1});
  return p;
}

// Registers every parameter as a leaf on g; the returned copy shares values
// with `p` but carries the node ids.
template <typename T>
RimParams<T> track_params(Graph<T>& g, const RimParams<T>& p) {
  RimParams<T> tracked = p;
  tracked.visit([&](const std::string&, Tensor<T>& t) { g.track(t); });
  return tracked;
}

template <typename T>
Tensor<T> init_state(const ModelConfig& cfg, int batch, int h, int w) {
  const int s = cfg.encode_stride();
  return Tensor<T>::zeros({batch, cfg.feat_state, (h + s - 1) / s, (w + s - 1) / s});
}

namespace detail {

// Shared trunk: encode, recur (or relu), decode, project to an update.
template <typename T>
struct CellOut {
  Tensor<T> delta;
  Tensor<T> state;
};

template <typename T>
CellOut<T> cell_step(Graph<T>& g, const RimParams<T>& p, const Tensor<T>& grad_eta,
                     const Tensor<T>& eta, const Tensor<T>& state) {
  const auto& cfg = p.config;
  Tensor<T> input = cfg.cell == CellKind::gdn ? grad_eta : concat_channels(g, grad_eta, eta);
  auto feat = tanh(g, conv2d(g, input, p.w_in, p.b_in, cfg.encode_stride(), 1));
  Tensor<T> trunk, new_state;
  if (cfg.cell == CellKind::ffn) {
    trunk = relu(g, conv2d(g, feat, p.w_ffn, p.b_ffn, 1, cfg.trunk_dilation()));
    new_state = state;
  } else {
    new_state = gru_step(g, feat, state, p.gru());
    trunk = new_state;
  }
  Tensor<T> up;
  if (cfg.variant == Variant::standard)
    up = tanh(g, conv2d_transpose(g, trunk, p.w_up, p.b_up, 2, eta.dim(2), eta.dim(3)));
  else
    up = tanh(g, conv2d(g, trunk, p.w_up, p.b_up, 1, cfg.decode_dilation()));
  CellOut<T> out;
  out.delta = conv2d(g, up, p.w_out, p.b_out, 1, 1);
  out.state = new_state;
  return out;
}

}  // namespace detail

// One update: the state moves first and the increment reads the new state.
template <typename T>
detail::CellOut<T> rim_step(Graph<T>& g, const RimParams<T>& p, const Tensor<T>& grad_eta,
                            const Tensor<T>& eta, const Tensor<T>& state) {
  auto out = detail::cell_step(g, p, grad_eta, eta, state);
  out.delta = add(g, eta, out.delta);  // now holds eta_{t+1}
  return out;
}

// Ablation: no current-estimate input, state retained.
template <typename T>
detail::CellOut<T> gdn_step(Graph<T>& g, const RimParams<T>& p, const Tensor<T>& grad_eta,
                            const Tensor<T>& state) {
  check(p.config.cell == CellKind::gdn, "gdn_step: params are not a gdn configuration");
  return detail::cell_step(g, p, grad_eta, grad_eta, state);
}

// Ablation: no recurrent state.
template <typename T>
Tensor<T> ffn_step(Graph<T>& g, const RimParams<T>& p, const Tensor<T>& grad_eta,
                   const Tensor<T>& eta) {
  check(p.config.cell == CellKind::ffn, "ffn_step: params are not an ffn configuration");
  auto dummy = init_state<T>(p.config, eta.dim(0), eta.dim(2), eta.dim(3));
  return detail::cell_step(g, p, grad_eta, eta, dummy).delta;
}

// Estimates at t = 0..T; x_t = Psi(eta_t) stays in (0, 1).
template <typename T>
struct Trajectory {
  std::vector<Tensor<T>> etas;
  std::vector<Tensor<T>> xs;
  Tensor<T> final_state;
  int steps = 0;
};

inline constexpr double kEtaClampMargin = 1e-3;

template <typename T>
Tensor<T> default_eta0(const LinearOperator<T>& op, const Tensor<T>& y) {
  return link_inverse(adjoint_raw(op, y), kEtaClampMargin);
}

// Unrolled inference: T cell applications, recomputing the likelihood
// gradient at every step.
template <typename T>
Trajectory<T> rollout(Graph<T>& g, const RimParams<T>& p, const LinearOperator<T>& op,
                      const Observation<T>& obs, int steps,
                      std::optional<Tensor<T>> eta0 = std::nullopt) {
  check(steps >= 1, "rollout: need at least one step, got " + std::to_string(steps));
  Tensor<T> eta = eta0 ? *eta0 : default_eta0(op, obs.y);
  check(eta.rank() == 4 && eta.dim(1) == p.config.channels,
        "rollout: eta0 shape " + shape_str(eta.shape) + " does not match " +
            std::to_string(p.config.channels) + " channels");
  Trajectory<T> traj;
  traj.steps = steps;
  traj.etas.reserve(static_cast<size_t>(steps) + 1);
  traj.xs.reserve(static_cast<size_t>(steps) + 1);
  traj.etas.push_back(eta);
  traj.xs.push_back(link_forward(g, eta));
  Tensor<T> state = init_state<T>(p.config, eta.dim(0), eta.dim(2), eta.dim(3));
  auto eps = make_eps(g, p.phi_eps);
  for (int t = 0; t < steps; ++t) {
    auto grad = grad_loglik_eta(g, op, obs, eta, eps, p.config.x_space_grad);
    if (p.config.cell == CellKind::ffn) {
      auto delta = ffn_step(g, p, grad, eta);
      eta = add(g, eta, delta);
    } else if (p.config.cell == CellKind::gdn) {
      auto out = gdn_step(g, p, grad, state);
      state = out.state;
      eta = add(g, eta, out.delta);
    } else {
      auto out = rim_step(g, p, grad, eta, state);
      state = out.state;
      eta = out.delta;
    }
    traj.etas.push_back(eta);
    traj.xs.push_back(link_forward(g, eta));
  }
  traj.final_state = state;
  return traj;
}

// Plain gradient-ascent update on the signal:
//   x' = x + gamma (grad + prior_grad(x)).
template <typename T>
Tensor<T> classical_map_step(const Tensor<T>& x, const Tensor<T>& grad,
                             const std::function<Tensor<T>(const Tensor<T>&)>& prior_grad,
                             double gamma) {
  check(x.shape == grad.shape, "classical_map_step: shape mismatch " + shape_str(x.shape) + " vs " +
                                   shape_str(grad.shape));
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  Tensor<T> pg = prior_grad ? prior_grad(x) : Tensor<T>::zeros(x.shape);
  check(pg.shape == x.shape, "classical_map_step: prior gradient shape mismatch");
  for (long i = 0; i < x.size(); ++i)
    (*out.data)[static_cast<size_t>(i)] =
        (*x.data)[static_cast<size_t>(i)] +
        static_cast<T>(gamma) * ((*grad.data)[static_cast<size_t>(i)] + (*pg.data)[static_cast<size_t>(i)]);
  return out;
}

}  // namespace rim
