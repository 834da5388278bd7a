#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace radvqa {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads binary (P5) or ASCII (P2) PGM with maxval ≤ 255.
GrayImage read_pgm(const std::string& path);
GrayImage parse_pgm(const std::string& bytes);
std::string encode_pgm(const GrayImage& img);

/// Encodes RGB as an 8-bit truecolor PNG (zlib-compressed IDAT).
std::string encode_png(const RgbImage& img);
void write_png(const std::string& path, const RgbImage& img);

}  // namespace radvqa
