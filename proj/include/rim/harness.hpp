// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace rim {

// Exit codes shared by the CLI and the command functions.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 2;       // config / data / io problems
inline constexpr int kExitDiverged = 3;    // training loss went non-finite

struct HarnessOptions {
  bool deterministic = false;  // force single-threaded bitwise mode
};

// Worker thread budget: 1 when deterministic, else RIM_THREADS capped by the
// hardware concurrency.
int worker_threads(const HarnessOptions& opts);

// train --config <file>
int cmd_train(const std::string& config_path, const HarnessOptions& opts);

// eval --checkpoint <file> --task <spec> --images <dir> --steps <T> --out <dir>
int cmd_eval(const std::string& checkpoint_path, const std::string& task_spec,
             const std::string& image_dir, int steps, const std::string& out_dir,
             const HarnessOptions& opts);

// reconstruct --checkpoint <file> --input <file> --task <spec> --out <dir>
// steps = 0 uses the unroll length stored in the checkpoint; film_stride > 0
// writes every film_stride-th estimate; measurement_input treats the file as
// y itself (identity and sr tasks only).
int cmd_reconstruct(const std::string& checkpoint_path, const std::string& input_path,
                    const std::string& task_spec, const std::string& out_dir, int steps,
                    int film_stride, bool measurement_input, const HarnessOptions& opts);

// synth --out <dir> --count <n> ... ; writes a deterministic procedural
// corpus usable as training data.
int cmd_synth(const std::string& out_dir, int count, int height, int width, int channels,
              uint64_t seed);

}  // namespace rim
