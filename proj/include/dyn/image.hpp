#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dyn/error.hpp"

namespace dyn {

// Interleaved 8-bit image, ch = 1 (gray) or 3 (rgb).
struct ImageU8 {
  int w = 0, h = 0, ch = 0;
  std::vector<uint8_t> px;

  uint8_t at(int x, int y, int c) const { return px[size_t((y * w + x) * ch + c)]; }
};

// Interleaved float image.
struct ImageF {
  int w = 0, h = 0, ch = 0;
  std::vector<float> px;

  float at(int x, int y, int c) const { return px[size_t((y * w + x) * ch + c)]; }
  float& at(int x, int y, int c) { return px[size_t((y * w + x) * ch + c)]; }
};

void png_write(const std::filesystem::path& path, const ImageU8& img);
ImageU8 png_read(const std::filesystem::path& path);

// Clamp [0,1] to 8 bits.
ImageU8 to_u8(const ImageF& img);
ImageF to_f32(const ImageU8& img);
// Map [-1,1] channels to [0,255] (normal map export convention).
ImageU8 signed_to_u8(const ImageF& img);

}  // namespace dyn
