// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rim/likelihood.hpp"
#include "rim/metrics.hpp"
#include "rim/model.hpp"
#include "rim/operators.hpp"

namespace rim {

// Flat store of square training patches (count x channels x p x p).
template <typename T>
struct PatchDataset {
  int channels = 0;
  int patch = 0;
  long count = 0;
  std::vector<T> data;

  long patch_elems() const { return static_cast<long>(channels) * patch * patch; }

  Tensor<T> batch(const std::vector<long>& idx) const {
    Tensor<T> out = Tensor<T>::zeros({static_cast<int>(idx.size()), channels, patch, patch});
    const long pe = patch_elems();
    for (size_t b = 0; b < idx.size(); ++b) {
      check(idx[b] >= 0 && idx[b] < count, "batch: patch index out of range");
      std::copy(data.begin() + idx[b] * pe, data.begin() + (idx[b] + 1) * pe,
                out.ptr() + static_cast<long>(b) * pe);
    }
    return out;
  }

  Tensor<T> one(long i) const { return batch({i}); }
};

// Every axis-aligned window on the stride grid of every image; images are
// (c, h, w) tensors with values in [0, 1].
template <typename T>
PatchDataset<T> extract_patches(const std::vector<Tensor<T>>& images, int patch, int stride) {
  check(patch >= 1 && stride >= 1, "extract_patches: patch and stride must be positive");
  check(!images.empty(), "extract_patches: no images");
  PatchDataset<T> ds;
  ds.patch = patch;
  ds.channels = images.front().dim(0);
  for (const auto& img : images) {
    check(img.rank() == 3, "extract_patches: images must be (c, h, w), got " + shape_str(img.shape));
    check(img.dim(0) == ds.channels, "extract_patches: mixed channel counts");
    const int h = img.dim(1), w = img.dim(2);
    check(h >= patch && w >= patch,
          "extract_patches: image " + shape_str(img.shape) + " smaller than patch " + std::to_string(patch));
    const int ny = (h - patch) / stride + 1;
    const int nx = (w - patch) / stride + 1;
    const long before = ds.count;
    ds.count += static_cast<long>(ny) * nx;
    ds.data.resize(static_cast<size_t>(ds.count * ds.patch_elems()));
    T* dst = ds.data.data() + before * ds.patch_elems();
    for (int oy = 0; oy < ny; ++oy)
      for (int ox = 0; ox < nx; ++ox)
        for (int c = 0; c < ds.channels; ++c) {
          const T* src = img.ptr() + (static_cast<long>(c) * h + oy * stride) * w + ox * stride;
          for (int row = 0; row < patch; ++row) {
            std::copy(src, src + patch, dst);
            src += w;
            dst += patch;
          }
        }
  }
  return ds;
}

// Sum of per-step weighted mean squared errors over t = 1..T; the t = 0
// initialisation carries no parameters and is not penalised.
template <typename T>
Tensor<T> total_loss(Graph<T>& g, const Trajectory<T>& traj, const Tensor<T>& x_true,
                     const std::vector<double>& weights) {
  check(static_cast<int>(weights.size()) == traj.steps,
        "total_loss: " + std::to_string(weights.size()) + " weights for " + std::to_string(traj.steps) +
            " steps");
  bool any = false;
  for (double w : weights) {
    check(w >= 0.0, "total_loss: negative weight");
    any = any || w > 0.0;
  }
  check(any, "total_loss: all weights are zero");
  Tensor<T> loss;
  for (int t = 1; t <= traj.steps; ++t) {
    const double w = weights[static_cast<size_t>(t - 1)];
    if (w == 0.0) continue;
    auto term = scale(g, mse(g, traj.xs[static_cast<size_t>(t)], x_true), static_cast<T>(w));
    loss = loss.defined() ? add(g, loss, term) : term;
  }
  return loss;
}

// Adam with optional global-norm gradient clipping. Moments are kept in
// double regardless of the parameter precision.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

template <typename T>
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // grads keyed by parameter name; missing keys mean zero gradient.
  void step(RimParams<T>& params, const std::map<std::string, Tensor<T>>& grads) {
    double norm_sq = 0.0;
    for (const auto& [name, g] : grads) {
      check(g.all_finite(), "adam: non-finite gradient for " + name);
      for (long i = 0; i < g.size(); ++i) {
        const double v = static_cast<double>((*g.data)[static_cast<size_t>(i)]);
        norm_sq += v * v;
      }
    }
    const double norm = std::sqrt(norm_sq);
    const double scale = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    params.visit([&](const std::string& name, Tensor<T>& p) {
      auto it = grads.find(name);
      if (it == grads.end()) return;
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) m.assign(static_cast<size_t>(p.size()), 0.0);
      if (v.empty()) v.assign(static_cast<size_t>(p.size()), 0.0);
      for (long i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>((*it->second.data)[static_cast<size_t>(i)]) * scale;
        m[static_cast<size_t>(i)] = cfg_.beta1 * m[static_cast<size_t>(i)] + (1.0 - cfg_.beta1) * g;
        v[static_cast<size_t>(i)] = cfg_.beta2 * v[static_cast<size_t>(i)] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m[static_cast<size_t>(i)] / bc1;
        const double vh = v[static_cast<size_t>(i)] / bc2;
        (*p.data)[static_cast<size_t>(i)] =
            static_cast<T>(static_cast<double>((*p.data)[static_cast<size_t>(i)]) -
                           cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    });
  }

  long step_count() const { return t_; }

private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// One corruption process with its sampling probability.
struct TrainTask {
  OpDescriptor op;
  double prob = 1.0;
};

struct TrainConfig {
  int steps = 10;
  std::vector<double> loss_weights;  // empty = all ones
  std::vector<TrainTask> tasks;
  std::vector<double> sigmas{0.1};  // drawn per example
  bool quantize = false;
  int batch_size = 16;
  long updates = 1000;
  AdamConfig adam;
  uint64_t seed = 1;
  int val_every = 200;   // <= 0 disables periodic validation
  int val_patches = 200;
  bool x_space_grad = false;  // mirrored into the model config at train time
};

struct TrainRow {
  long update;
  std::string task;
  double loss;
  double wall_s;
};

struct ValRow {
  long update;
  double psnr_mean;
};

template <typename T>
struct TrainResult {
  RimParams<T> params;
  std::vector<TrainRow> train_rows;
  std::vector<ValRow> val_rows;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void validate_train_config(const TrainConfig& cfg) {
  check(cfg.steps >= 1, "train: steps must be >= 1");
  check(cfg.batch_size >= 1, "train: batch size must be >= 1");
  check(cfg.updates >= 0, "train: negative update count");
  check(!cfg.tasks.empty(), "train: no tasks configured");
  check(!cfg.sigmas.empty(), "train: no noise levels configured");
  double total = 0.0;
  for (const auto& t : cfg.tasks) {
    check(t.prob >= 0.0, "train: negative task probability");
    total += t.prob;
  }
  check(std::abs(total - 1.0) < 1e-9, "train: task probabilities must sum to 1, got " + std::to_string(total));
}

// Deterministic per-patch noise stream for comparable validation scores.
constexpr uint64_t kValNoiseStream = 0x76616c6964ull;

}  // namespace detail

// Mean PSNR of x_T on a fixed validation set with fixed noise seeds; tasks
// and noise levels cycle deterministically over the patches. Patches sharing
// a (task, sigma) pair run as one batched rollout; the per-patch noise
// streams do not depend on the grouping.
template <typename T>
double validate(const RimParams<T>& params, const TrainConfig& cfg, const PatchDataset<T>& val,
                const std::vector<LinearOperator<T>>& ops, int steps_override = 0) {
  const long n = std::min<long>(val.count, cfg.val_patches);
  check(n >= 1, "validate: empty validation set");
  const long n_ops = static_cast<long>(ops.size());
  const long n_sig = static_cast<long>(cfg.sigmas.size());
  const int steps = steps_override > 0 ? steps_override : cfg.steps;
  double acc = 0.0;
  for (long oi = 0; oi < n_ops; ++oi)
    for (long si = 0; si < n_sig; ++si) {
      std::vector<long> idx;
      for (long i = 0; i < n; ++i)
        if (i % n_ops == oi && i % n_sig == si) idx.push_back(i);
      if (idx.empty()) continue;
      const auto& op = ops[static_cast<size_t>(oi)];
      const double sigma = cfg.sigmas[static_cast<size_t>(si)];
      auto x_true = val.batch(idx);
      Observation<T> obs;
      obs.sigma = sigma;
      obs.quantized = cfg.quantize;
      obs.op_ref = op.descriptor();
      obs.y = apply_raw(op, x_true);
      if (sigma > 0.0) {
        const long per = obs.y.size() / static_cast<long>(idx.size());
        for (size_t b = 0; b < idx.size(); ++b) {
          Rng noise(mix_seed(detail::kValNoiseStream, static_cast<uint64_t>(idx[b])));
          T* slice = obs.y.ptr() + static_cast<long>(b) * per;
          for (long j = 0; j < per; ++j)
            slice[j] = static_cast<T>(static_cast<double>(slice[j]) + sigma * noise.normal());
        }
      }
      if (cfg.quantize) obs.y = quantize_8bit(obs.y);
      Graph<T> g;
      g.set_recording(false);
      auto traj = rollout(g, params, op, obs, steps);
      // per-patch scores from the batched trajectory
      const long per_x = x_true.size() / static_cast<long>(idx.size());
      for (size_t b = 0; b < idx.size(); ++b) {
        double ss = 0.0;
        const T* xp = traj.xs.back().ptr() + static_cast<long>(b) * per_x;
        const T* tp = x_true.ptr() + static_cast<long>(b) * per_x;
        for (long j = 0; j < per_x; ++j) {
          const double d = static_cast<double>(xp[j]) - static_cast<double>(tp[j]);
          ss += d * d;
        }
        const double mse_v = ss / static_cast<double>(per_x);
        acc += mse_v == 0.0 ? 200.0 : 10.0 * std::log10(1.0 / mse_v);
      }
    }
  return acc / static_cast<double>(n);
}

// BPTT training: per update, sample a batch and a task, simulate fresh
// measurements, unroll, backpropagate, clip and step. Deterministic for a
// fixed seed (single-threaded by construction).
template <typename T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const PatchDataset<T>& train_set, const PatchDataset<T>& val_set) {
  detail::validate_train_config(cfg);
  check(train_set.count >= 1, "train: empty training set");
  ModelConfig mc = model_cfg;
  mc.x_space_grad = cfg.x_space_grad;

  TrainResult<T> result;
  result.params = rim_init<T>(mc, cfg.seed);
  std::vector<double> weights = cfg.loss_weights;
  if (weights.empty()) weights.assign(static_cast<size_t>(cfg.steps), 1.0);
  check(static_cast<int>(weights.size()) == cfg.steps, "train: loss weight count != steps");

  const Shape patch_shape{train_set.channels, train_set.patch, train_set.patch};
  std::vector<LinearOperator<T>> ops;
  ops.reserve(cfg.tasks.size());
  for (const auto& t : cfg.tasks) ops.push_back(make_operator<T>(t.op, patch_shape));

  std::vector<LinearOperator<T>> val_ops;
  if (val_set.count > 0) {
    const Shape val_shape{val_set.channels, val_set.patch, val_set.patch};
    for (const auto& t : cfg.tasks) val_ops.push_back(make_operator<T>(t.op, val_shape));
  }

  Rng rng(mix_seed(cfg.seed, 0x747261696eull));
  Adam<T> opt(cfg.adam);
  const auto t0 = std::chrono::steady_clock::now();

  auto run_validation = [&](long update) {
    if (val_set.count == 0) return;
    result.val_rows.push_back({update, validate(result.params, cfg, val_set, val_ops)});
  };

  run_validation(0);
  for (long update = 1; update <= cfg.updates; ++update) {
    // sample task by probability, then a batch of patches and noise levels
    const double r = rng.uniform01();
    size_t task_idx = 0;
    double cum = 0.0;
    for (size_t k = 0; k < cfg.tasks.size(); ++k) {
      cum += cfg.tasks[k].prob;
      if (r < cum) {
        task_idx = k;
        break;
      }
      task_idx = k;
    }
    std::vector<long> idx(static_cast<size_t>(cfg.batch_size));
    for (auto& i : idx) i = static_cast<long>(rng.below(static_cast<uint64_t>(train_set.count)));
    auto x_true = train_set.batch(idx);
    const double sigma = cfg.sigmas[rng.below(cfg.sigmas.size())];
    const auto& op = ops[task_idx];
    auto obs = observe(op, x_true, sigma, rng.raw(), cfg.quantize);

    Graph<T> g;
    auto tracked = track_params(g, result.params);
    auto traj = rollout(g, tracked, op, obs, cfg.steps);
    auto loss = total_loss(g, traj, x_true, weights);
    const double loss_v = static_cast<double>(loss.item());
    if (!std::isfinite(loss_v))
      throw DivergenceError("train: loss diverged (non-finite) at update " + std::to_string(update) +
                            " on task " + op_kind_name(op.kind));
    g.backward(loss);
    std::map<std::string, Tensor<T>> grads;
    tracked.visit([&](const std::string& name, Tensor<T>& t) { grads.emplace(name, g.grad(t)); });
    opt.step(result.params, grads);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.train_rows.push_back({update, op_kind_name(op.kind), loss_v, wall});
    if (cfg.val_every > 0 && (update % cfg.val_every == 0 || update == cfg.updates))
      run_validation(update);
  }
  return result;
}

}  // namespace rim
