#include "radvqa/common/image.hpp"

#include <zlib.h>

#include <array>
#include <cctype>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa {

namespace {

// Reads the next header integer, skipping whitespace and # comments.
int next_header_int(const std::string& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) ++pos;
  if (start == pos) throw DataError("bad_pgm", "malformed PGM header");
  return std::stoi(b.substr(start, pos - start));
}

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(
                   crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

GrayImage parse_pgm(const std::string& b) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '2')) throw DataError("bad_pgm", "not a PGM file");
  const bool binary = b[1] == '5';
  std::size_t pos = 2;
  GrayImage img;
  img.width = next_header_int(b, pos);
  img.height = next_header_int(b, pos);
  const int maxval = next_header_int(b, pos);
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError("bad_pgm", "unsupported PGM dimensions or maxval");
  }
  const auto n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  img.pixels.resize(n);
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (b.size() < pos + n) throw DataError("bad_pgm", "truncated PGM data");
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<std::uint8_t>(b[pos + i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<std::uint8_t>(next_header_int(b, pos));
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  }
  return img;
}

GrayImage read_pgm(const std::string& path) { return parse_pgm(text::read_file(path)); }

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

std::string encode_png(const RgbImage& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3) {
    throw ShapeError("RGB buffer does not match image dimensions");
  }
  std::string raw;
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  raw.reserve((stride + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back('\0');  // filter type None
    raw.append(reinterpret_cast<const char*>(img.pixels.data()) + static_cast<std::size_t>(y) * stride, stride);
  }
  uLongf cap = compressBound(static_cast<uLong>(raw.size()));
  std::string z(cap, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &cap, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
    throw Error("png_encode", "zlib compression failed");
  }
  z.resize(cap);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit, truecolor, deflate, adaptive, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", "");
  return out;
}

void write_png(const std::string& path, const RgbImage& img) { text::write_file(path, encode_png(img)); }

}  // namespace radvqa
