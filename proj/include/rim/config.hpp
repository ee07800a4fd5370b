// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rim/model.hpp"
#include "rim/operators.hpp"
#include "rim/training.hpp"

namespace rim {

// One corruption task as named on the command line:
//   denoise:sigma=<r>[,quantize] | inpaint:p=<r>,seed=<n> |
//   gaussian:p=<r>,seed=<n> | bernoulli:p=<r>,seed=<n> |
//   fourier:p=<r>,seed=<n> | sr:factor=<2|3|4>,sigma=<r>
// An optional sigma=<r> is accepted for the projection tasks as well.
struct TaskSpec {
  OpDescriptor op;
  double sigma = 0.0;
  bool quantize = false;
};

TaskSpec parse_task_spec(const std::string& spec);
std::string task_spec_to_string(const TaskSpec& spec);

// Self-describing experiment document; round-trips losslessly and rejects
// unknown keys.
struct DataConfig {
  std::string train_images;
  std::string val_images;  // empty: hold out the tail of the training corpus
  int patch_size = 16;
  int patch_stride = 8;
  int val_patches = 200;

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir;
  std::string precision = "f32";  // f32 | f64
  DataConfig data;
  ModelConfig model = desk_config();
  TrainConfig train;

  bool operator==(const ExperimentConfig& o) const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

// Canonical JSON of the architecture section alone.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// FNV-1a over the canonical architecture JSON; stored in checkpoints to
// detect mismatched loads.
std::string config_hash(const ModelConfig& cfg);

}  // namespace rim
