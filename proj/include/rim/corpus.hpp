// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "rim/image_io.hpp"

namespace rim {

// Deterministic procedural images: smooth gradients, soft-edged shapes and a
// low-frequency texture, clipped to [0, 1]. Piecewise-smooth statistics make
// the corpus usable for restoration training where no photographs are at
// hand.
std::vector<Image> synth_corpus(int count, int height, int width, int channels, uint64_t seed);

}  // namespace rim
