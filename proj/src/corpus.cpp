// SPDX-License-Identifier: Apache-2.0
#include "rim/corpus.hpp"

#include <algorithm>
#include <cmath>

#include "rim/rng.hpp"
#include "rim/tensor.hpp"

namespace rim {

namespace {

double soft_edge(double signed_dist, double softness) {
  return 1.0 / (1.0 + std::exp(signed_dist / softness));
}

}  // namespace

std::vector<Image> synth_corpus(int count, int height, int width, int channels, uint64_t seed) {
  check(count >= 1 && height >= 4 && width >= 4, "synth_corpus: degenerate request");
  check(channels == 1 || channels == 3, "synth_corpus: channels must be 1 or 3");
  std::vector<Image> out;
  out.reserve(static_cast<size_t>(count));
  for (int n = 0; n < count; ++n) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(n)));
    Image img;
    img.channels = channels;
    img.height = height;
    img.width = width;
    img.px.assign(static_cast<size_t>(img.size()), 0.0);

    const double base = rng.uniform(0.25, 0.75);
    const double gx = rng.uniform(-0.35, 0.35);
    const double gy = rng.uniform(-0.35, 0.35);

    struct Blob {
      double cx, cy, rx, ry, angle, level, soft;
      bool rect;
    };
    std::vector<Blob> blobs;
    const int n_blobs = 3 + static_cast<int>(rng.below(4));
    for (int b = 0; b < n_blobs; ++b) {
      Blob bl;
      bl.cx = rng.uniform(0.0, width);
      bl.cy = rng.uniform(0.0, height);
      bl.rx = rng.uniform(0.08, 0.35) * width;
      bl.ry = rng.uniform(0.08, 0.35) * height;
      bl.angle = rng.uniform(0.0, M_PI);
      bl.level = rng.uniform(-0.45, 0.45);
      bl.soft = rng.uniform(0.6, 3.0);
      bl.rect = rng.uniform01() < 0.4;
      blobs.push_back(bl);
    }

    const double fx = rng.uniform(0.5, 2.5) * 2.0 * M_PI / width;
    const double fy = rng.uniform(0.5, 2.5) * 2.0 * M_PI / height;
    const double tex_amp = rng.uniform(0.02, 0.08);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);

    // channel tints keep colour images correlated across channels
    std::vector<double> tint(static_cast<size_t>(channels), 0.0);
    for (int c = 1; c < channels; ++c) tint[static_cast<size_t>(c)] = rng.uniform(-0.12, 0.12);

    const long pixels = static_cast<long>(height) * width;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double v = base + gx * (static_cast<double>(x) / width - 0.5) +
                   gy * (static_cast<double>(y) / height - 0.5);
        for (const auto& b : blobs) {
          const double dx = x - b.cx, dy = y - b.cy;
          const double ca = std::cos(b.angle), sa = std::sin(b.angle);
          const double u = (ca * dx + sa * dy) / b.rx;
          const double w = (-sa * dx + ca * dy) / b.ry;
          const double dist = b.rect ? std::max(std::abs(u), std::abs(w)) - 1.0
                                     : std::sqrt(u * u + w * w) - 1.0;
          v += b.level * soft_edge(dist * std::min(b.rx, b.ry), b.soft);
        }
        v += tex_amp * std::sin(fx * x + phase) * std::cos(fy * y);
        for (int c = 0; c < channels; ++c) {
          const double vc = std::min(std::max(v + tint[static_cast<size_t>(c)] * (v - 0.5), 0.0), 1.0);
          img.px[static_cast<size_t>(c * pixels + y * width + x)] = vc;
        }
      }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace rim
