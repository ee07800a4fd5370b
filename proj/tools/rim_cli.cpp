// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdint>
#include <string>

#include "rim/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Learned iterative reconstruction for linear inverse problems"};
  app.require_subcommand(1);

  rim::HarnessOptions opts;
  app.add_flag("--deterministic", opts.deterministic, "single-threaded bitwise mode");

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a JSON experiment config");
  train->add_option("--config", config_path, "experiment config file")->required();

  std::string ckpt, task, images, out_dir;
  int steps = 0;
  auto* eval = app.add_subcommand("eval", "per-image metrics and the per-step psnr curve");
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--task", task, "task spec, e.g. denoise:sigma=0.098 or inpaint:p=0.2,seed=1")
      ->required();
  eval->add_option("--images", images, "directory of pgm/ppm images")->required();
  eval->add_option("--steps", steps, "inference steps (default: trained length)");
  eval->add_option("--out", out_dir, "output directory")->required();

  std::string input;
  int film_stride = 0;
  bool measurement = false;
  auto* rec = app.add_subcommand("reconstruct", "restore one image and optionally a filmstrip");
  rec->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  rec->add_option("--input", input, "input image (clean by default; see --measurement)")->required();
  rec->add_option("--task", task, "task spec")->required();
  rec->add_option("--out", out_dir, "output directory")->required();
  rec->add_option("--steps", steps, "inference steps (default: trained length)");
  rec->add_option("--filmstrip", film_stride, "write every k-th step estimate");
  rec->add_flag("--measurement", measurement, "treat the input as the measurement y itself");

  int count = 24, height = 96, width = 96, channels = 1;
  std::uint64_t seed = 1;
  auto* synth = app.add_subcommand("synth", "write a deterministic procedural training corpus");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of images");
  synth->add_option("--height", height, "image height");
  synth->add_option("--width", width, "image width");
  synth->add_option("--channels", channels, "1 (pgm) or 3 (ppm)");
  synth->add_option("--seed", seed, "corpus seed");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return rim::cmd_train(config_path, opts);
  if (eval->parsed()) return rim::cmd_eval(ckpt, task, images, steps, out_dir, opts);
  if (rec->parsed())
    return rim::cmd_reconstruct(ckpt, input, task, out_dir, steps, film_stride, measurement, opts);
  if (synth->parsed()) return rim::cmd_synth(out_dir, count, height, width, channels, seed);
  return 1;
}
