// SPDX-License-Identifier: Apache-2.0
#include "rim/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace rim {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("image '" + path + "': " + what);
}

struct TokenReader {
  const std::string& buf;
  const std::string& path;
  size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      const char c = buf[pos];
      if (c == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  long next_int() {
    skip_space_and_comments();
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
      fail(path, "malformed header (expected integer)");
    long v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1'000'000'000L) fail(path, "header value out of range");
      ++pos;
    }
    return v;
  }
};

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 2 || buf[0] != 'P') fail(path, "not a netpbm file");
  const char kind = buf[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
    fail(path, std::string("unsupported netpbm variant P") + kind);
  const bool color = kind == '3' || kind == '6';
  const bool binary = kind == '5' || kind == '6';

  TokenReader tr{buf, path, 2};
  const long w = tr.next_int();
  const long h = tr.next_int();
  const long maxval = tr.next_int();
  if (w < 1 || h < 1) fail(path, "empty image");
  if (maxval < 1 || maxval > 255) fail(path, "unsupported maxval " + std::to_string(maxval));

  Image img;
  img.channels = color ? 3 : 1;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w);
  img.px.resize(static_cast<size_t>(img.size()));
  const long pixels = w * h;
  const int nc = img.channels;

  // interleaved samples in file order -> channel-major storage
  auto put = [&](long pixel, int channel, long value) {
    if (value < 0 || value > maxval) fail(path, "sample out of range");
    img.px[static_cast<size_t>(channel * pixels + pixel)] =
        static_cast<double>(value) / static_cast<double>(maxval);
  };

  if (binary) {
    // exactly one whitespace byte separates the header from the raster
    if (tr.pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[tr.pos])))
      fail(path, "missing raster separator");
    ++tr.pos;
    const size_t need = static_cast<size_t>(pixels) * nc;
    if (buf.size() - tr.pos < need) fail(path, "truncated raster");
    const unsigned char* raw = reinterpret_cast<const unsigned char*>(buf.data() + tr.pos);
    for (long p = 0; p < pixels; ++p)
      for (int c = 0; c < nc; ++c) put(p, c, raw[p * nc + c]);
  } else {
    for (long p = 0; p < pixels; ++p)
      for (int c = 0; c < nc; ++c) put(p, c, tr.next_int());
  }
  return img;
}

void save_image(const std::string& path, const Image& img) {
  check(img.channels == 1 || img.channels == 3,
        "save_image: only 1- or 3-channel images, got " + std::to_string(img.channels));
  check(img.height >= 1 && img.width >= 1, "save_image: empty image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("image '" + path + "': cannot write");
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  const long pixels = static_cast<long>(img.height) * img.width;
  std::vector<unsigned char> raw(static_cast<size_t>(pixels * img.channels));
  for (long p = 0; p < pixels; ++p)
    for (int c = 0; c < img.channels; ++c) {
      const double v = std::min(std::max(img.px[static_cast<size_t>(c * pixels + p)], 0.0), 1.0);
      raw[static_cast<size_t>(p * img.channels + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("image '" + path + "': write failed");
}

std::vector<std::pair<std::string, Image>> load_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("image directory '" + dir + "' does not exist");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("image directory '" + dir + "' is empty");
  std::vector<std::pair<std::string, Image>> out;
  for (const auto& name : names) {
    std::string ext = fs::path(name).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const std::string full = (fs::path(dir) / name).string();
    if (ext != ".pgm" && ext != ".ppm" && ext != ".pnm")
      throw std::runtime_error("image '" + full + "': unsupported format (netpbm .pgm/.ppm/.pnm only)");
    out.emplace_back(name, load_image(full));
  }
  return out;
}

}  // namespace rim
