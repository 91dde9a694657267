#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flame {

// Interleaved 8-bit RGB image, row-major, origin at the top-left pixel.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // height * width * 3

  ImageU8() = default;
  ImageU8(int w, int h)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool empty() const { return width == 0 || height == 0; }
};

// Binary PPM (P6, maxval 255). Byte-deterministic: identical images give
// identical files.
ImageU8 read_ppm(const std::string& path);
void write_ppm(const ImageU8& img, const std::string& path);

}  // namespace flame
