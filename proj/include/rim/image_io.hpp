// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rim/tensor.hpp"

namespace rim {

// Channel-major (c, h, w) pixel block with values in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> px;

  long size() const { return static_cast<long>(channels) * height * width; }
};

// Reads a netpbm file (P2/P3 ascii or P5/P6 binary, maxval <= 255); values
// map v / maxval. Throws std::runtime_error naming the file on any defect.
Image load_image(const std::string& path);

// Writes P5 (1 channel) or P6 (3 channels) with maxval 255; pixel values are
// clipped to [0, 1] and quantised to the 8-bit lattice.
void save_image(const std::string& path, const Image& img);

// Every image in a directory in lexicographic filename order. Unsupported or
// undecodable files are hard errors naming the file; an empty directory is
// an error, not an empty dataset.
std::vector<std::pair<std::string, Image>> load_images(const std::string& dir);

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  std::vector<T> v(static_cast<size_t>(img.size()));
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.px[i]);
  return Tensor<T>::from({img.channels, img.height, img.width}, std::move(v));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
  check(t.rank() == 3 || (t.rank() == 4 && t.dim(0) == 1),
        "tensor_to_image: need (c, h, w) or (1, c, h, w), got " + shape_str(t.shape));
  const int off = t.rank() == 4 ? 1 : 0;
  Image img;
  img.channels = t.dim(off);
  img.height = t.dim(off + 1);
  img.width = t.dim(off + 2);
  img.px.resize(static_cast<size_t>(img.size()));
  for (long i = 0; i < img.size(); ++i)
    img.px[static_cast<size_t>(i)] = static_cast<double>((*t.data)[static_cast<size_t>(i)]);
  return img;
}

}  // namespace rim
