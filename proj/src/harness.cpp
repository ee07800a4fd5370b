// SPDX-License-Identifier: Apache-2.0
#include "rim/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include "rim/checkpoint.hpp"
#include "rim/config.hpp"
#include "rim/corpus.hpp"
#include "rim/image_io.hpp"
#include "rim/metrics.hpp"
#include "rim/training.hpp"

namespace rim {

namespace fs = std::filesystem;

namespace {

std::string fmt_fixed(double v, int prec) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.8g", v);
  return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
  }
  fs::rename(tmp, target);
}

void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::thread> pool;
  const int workers = static_cast<int>(std::min<long>(threads, n));
  pool.reserve(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (long i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

template <typename T>
std::vector<Tensor<T>> to_tensors(const std::vector<std::pair<std::string, Image>>& images) {
  std::vector<Tensor<T>> out;
  out.reserve(images.size());
  for (const auto& [name, img] : images) out.push_back(image_to_tensor<T>(img));
  return out;
}

std::string train_csv(const std::vector<TrainRow>& rows) {
  std::string s = "update,task,loss,wall_s\n";
  for (const auto& r : rows)
    s += std::to_string(r.update) + "," + r.task + "," + fmt_g(r.loss) + "," + fmt_fixed(r.wall_s, 3) + "\n";
  return s;
}

std::string val_csv(const std::vector<ValRow>& rows) {
  std::string s = "update,psnr_mean\n";
  for (const auto& r : rows) s += std::to_string(r.update) + "," + fmt_fixed(r.psnr_mean, 6) + "\n";
  return s;
}

template <typename T>
int run_train(const ExperimentConfig& cfg) {
  if (!fs::is_directory(cfg.data.train_images))
    throw std::runtime_error("dataset path '" + cfg.data.train_images + "' does not exist");
  auto images = load_images(cfg.data.train_images);

  std::vector<Tensor<T>> train_images, val_images;
  if (!cfg.data.val_images.empty()) {
    train_images = to_tensors<T>(images);
    val_images = to_tensors<T>(load_images(cfg.data.val_images));
  } else {
    // hold out the lexicographic tail as validation data
    auto all = to_tensors<T>(images);
    const size_t n_val = std::max<size_t>(1, all.size() / 5);
    const size_t n_train = all.size() > n_val ? all.size() - n_val : 1;
    train_images.assign(all.begin(), all.begin() + static_cast<long>(n_train));
    val_images.assign(all.begin() + static_cast<long>(n_train), all.end());
    if (val_images.empty()) val_images = train_images;
  }

  auto train_set = extract_patches(train_images, cfg.data.patch_size, cfg.data.patch_stride);
  auto val_set = extract_patches(val_images, cfg.data.patch_size, cfg.data.patch_stride);
  std::cout << "training on " << train_set.count << " patches, validating on "
            << std::min<long>(val_set.count, cfg.data.val_patches) << "\n";

  auto result = train<T>(cfg.model, cfg.train, train_set, val_set);

  fs::create_directories(cfg.out_dir);
  write_text_atomic((fs::path(cfg.out_dir) / "train.csv").string(), train_csv(result.train_rows));
  write_text_atomic((fs::path(cfg.out_dir) / "val.csv").string(), val_csv(result.val_rows));
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.rim").string(), result.params,
                  cfg.train.updates, cfg.train.steps);
  if (!result.val_rows.empty())
    std::cout << "final validation psnr: " << fmt_fixed(result.val_rows.back().psnr_mean, 3)
              << " dB\n";
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "checkpoint.rim").string() << "\n";
  return kExitOk;
}

}  // namespace

int worker_threads(const HarnessOptions& opts) {
  if (opts.deterministic) return 1;
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("RIM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) return std::min(cap, hw);
  }
  return hw;
}

int cmd_train(const std::string& config_path, const HarnessOptions& opts) {
  (void)opts;  // training is single-threaded by construction
  try {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    if (cfg.precision == "f64") return run_train<double>(cfg);
    return run_train<float>(cfg);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_eval(const std::string& checkpoint_path, const std::string& task_spec,
             const std::string& image_dir, int steps, const std::string& out_dir,
             const HarnessOptions& opts) {
  try {
    CheckpointInfo info;
    auto params = load_checkpoint<float>(checkpoint_path, &info);
    const TaskSpec task = parse_task_spec(task_spec);
    if (steps <= 0) steps = info.trained_steps;
    check(steps >= 1, "eval: step count must be positive");
    auto images = load_images(image_dir);

    struct Row {
      std::string id;
      bool skipped = false;
      double psnr_v = 0, ssim_v = 0;
      std::vector<double> curve;
    };
    std::vector<Row> rows(images.size());

    parallel_for(static_cast<long>(images.size()), worker_threads(opts), [&](long i) {
      const auto& [name, img] = images[static_cast<size_t>(i)];
      Row& row = rows[static_cast<size_t>(i)];
      row.id = name;
      if (task.op.kind == OpKind::bicubic &&
          (img.height % task.op.factor != 0 || img.width % task.op.factor != 0)) {
        row.skipped = true;
        return;
      }
      auto x_true = image_to_tensor<float>(img);
      auto x4 = Tensor<float>::from({1, img.channels, img.height, img.width}, *x_true.data);
      auto op = make_operator<float>(task.op, {img.channels, img.height, img.width});
      auto obs = observe(op, x4, task.sigma, mix_seed(task.op.seed, static_cast<uint64_t>(i)),
                         task.quantize);
      Graph<float> g;
      g.set_recording(false);
      auto traj = rollout(g, params, op, obs, steps);
      row.curve.reserve(traj.xs.size());
      for (const auto& x : traj.xs) row.curve.push_back(psnr(x, x4));
      row.psnr_v = row.curve.back();
      row.ssim_v = ssim(traj.xs.back(), x4);
    });

    std::vector<double> psnrs, ssims;
    std::string metrics = "image_id,psnr,ssim\n";
    std::vector<double> curve_sum;
    long curve_n = 0;
    for (const auto& row : rows) {
      if (row.skipped) {
        std::cerr << "warning: skipping '" << row.id << "' (size not divisible by sr factor)\n";
        continue;
      }
      metrics += row.id + "," + fmt_fixed(row.psnr_v, 6) + "," + fmt_fixed(row.ssim_v, 6) + "\n";
      psnrs.push_back(row.psnr_v);
      ssims.push_back(row.ssim_v);
      if (curve_sum.empty()) curve_sum.assign(row.curve.size(), 0.0);
      for (size_t t = 0; t < row.curve.size(); ++t) curve_sum[t] += row.curve[t];
      ++curve_n;
    }
    check(curve_n > 0, "eval: no usable images");

    MetricReport report;
    report.psnr = psnrs;
    report.ssim = ssims;
    double pm = 0, sm = 0;
    for (double v : psnrs) pm += v;
    for (double v : ssims) sm += v;
    report.psnr_mean = pm / static_cast<double>(psnrs.size());
    report.ssim_mean = sm / static_cast<double>(ssims.size());
    report.psnr_sem = psnrs.size() >= 2 ? bootstrap_sem(psnrs, 10000, 1) : 0.0;
    report.ssim_sem = ssims.size() >= 2 ? bootstrap_sem(ssims, 10000, 2) : 0.0;
    metrics += "mean," + fmt_fixed(report.psnr_mean, 6) + "," + fmt_fixed(report.ssim_mean, 6) + "\n";
    metrics += "sem," + fmt_fixed(report.psnr_sem, 6) + "," + fmt_fixed(report.ssim_sem, 6) + "\n";

    std::string curve = "t,psnr_mean\n";
    for (size_t t = 0; t < curve_sum.size(); ++t)
      curve += std::to_string(t) + "," + fmt_fixed(curve_sum[t] / static_cast<double>(curve_n), 6) + "\n";

    fs::create_directories(out_dir);
    write_text_atomic((fs::path(out_dir) / "metrics.csv").string(), metrics);
    write_text_atomic((fs::path(out_dir) / "curve.csv").string(), curve);
    std::cout << "psnr " << fmt_fixed(report.psnr_mean, 3) << " +- " << fmt_fixed(report.psnr_sem, 3)
              << " dB, ssim " << fmt_fixed(report.ssim_mean, 4) << " +- "
              << fmt_fixed(report.ssim_sem, 4) << " over " << psnrs.size() << " images\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_reconstruct(const std::string& checkpoint_path, const std::string& input_path,
                    const std::string& task_spec, const std::string& out_dir, int steps,
                    int film_stride, bool measurement_input, const HarnessOptions& opts) {
  (void)opts;
  try {
    CheckpointInfo info;
    auto params = load_checkpoint<float>(checkpoint_path, &info);
    const TaskSpec task = parse_task_spec(task_spec);
    if (steps <= 0) steps = info.trained_steps;
    check(steps >= 1, "reconstruct: step count must be positive");
    const Image input = load_image(input_path);

    Observation<float> obs;
    LinearOperator<float> op;
    Tensor<float> x_true;  // defined only when the input is clean
    if (measurement_input) {
      check(task.op.kind == OpKind::identity || task.op.kind == OpKind::bicubic,
            "reconstruct: measurement input is only image-shaped for denoise and sr tasks");
      Shape signal{input.channels, input.height, input.width};
      if (task.op.kind == OpKind::bicubic) {
        signal[1] *= task.op.factor;
        signal[2] *= task.op.factor;
      }
      op = make_operator<float>(task.op, signal);
      auto img_t = image_to_tensor<float>(input);
      obs.y = Tensor<float>::from({1, input.channels, input.height, input.width}, *img_t.data);
      obs.sigma = task.sigma;
      obs.quantized = task.quantize;
      obs.op_ref = op.descriptor();
    } else {
      op = make_operator<float>(task.op, {input.channels, input.height, input.width});
      auto img_t = image_to_tensor<float>(input);
      x_true = Tensor<float>::from({1, input.channels, input.height, input.width}, *img_t.data);
      obs = observe(op, x_true, task.sigma, mix_seed(task.op.seed, 0x7265636full), task.quantize);
    }

    Graph<float> g;
    g.set_recording(false);
    auto traj = rollout(g, params, op, obs, steps);

    fs::create_directories(out_dir);
    const std::string stem = fs::path(input_path).stem().string();
    const std::string ext = input.channels == 3 ? ".ppm" : ".pgm";
    const std::string recon_path = (fs::path(out_dir) / (stem + "_recon" + ext)).string();
    save_image(recon_path, tensor_to_image(traj.xs.back()));
    if (film_stride > 0)
      for (int t = 0; t < static_cast<int>(traj.xs.size()); t += film_stride)
        save_image((fs::path(out_dir) / (stem + "_t" + std::to_string(t) + ext)).string(),
                   tensor_to_image(traj.xs[static_cast<size_t>(t)]));
    std::cout << "wrote " << recon_path << "\n";
    if (x_true.defined())
      std::cout << "psnr vs input: " << fmt_fixed(psnr(traj.xs.back(), x_true), 3) << " dB (start "
                << fmt_fixed(psnr(traj.xs.front(), x_true), 3) << " dB)\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_synth(const std::string& out_dir, int count, int height, int width, int channels,
              uint64_t seed) {
  try {
    auto images = synth_corpus(count, height, width, channels, seed);
    fs::create_directories(out_dir);
    const std::string ext = channels == 3 ? ".ppm" : ".pgm";
    for (size_t i = 0; i < images.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%03zu%s", i, ext.c_str());
      save_image((fs::path(out_dir) / name).string(), images[i]);
    }
    std::cout << "wrote " << images.size() << " images to " << out_dir << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace rim
