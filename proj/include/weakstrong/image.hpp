#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "weakstrong/error.hpp"

namespace weakstrong {

// Small HxWx3 RGB raster with double-valued channels in [0, 255]. Values stay
// continuous through the augmentation pipeline; quantization happens when an
// image is persisted or dumped.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // h * w * 3, interleaved RGB

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * 3 + c];
  }

  std::size_t pixel_count() const { return height * width; }
  bool empty() const { return data.empty(); }
};

inline void clamp_channels(Image& img) {
  for (double& v : img.data) v = std::min(255.0, std::max(0.0, v));
}

inline void quantize(Image& img) {
  for (double& v : img.data) v = std::min(255.0, std::max(0.0, std::round(v)));
}

// Binary PPM (P6) dump, 8-bit per channel.
inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_ppm: cannot open " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.data) {
    const double q = std::min(255.0, std::max(0.0, std::round(v)));
    os.put(static_cast<char>(static_cast<unsigned char>(q)));
  }
  if (!os) throw Error("write_ppm: write failed for " + path);
}

}  // namespace weakstrong
