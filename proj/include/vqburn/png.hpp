#pragma once

// 8-bit RGB PNG encoding (zlib for deflate and CRC) and the small image
// helpers used by the report command.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "vqburn/common.hpp"
#include "vqburn/volume.hpp"

namespace vqburn {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triplets

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int y, int x) const { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xffu));
}

inline void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                                                static_cast<uInt>(body.size()))));
}

}  // namespace detail

inline std::string encode_png(const RgbImage& img) {
  std::string raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width * 3 + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(img.at(y, 0)), static_cast<std::size_t>(img.width) * 3);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string z(len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &len, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw data_error("PNG compression failed");
  z.resize(len);

  std::string out = "\x89PNG\r\n\x1a\n";
  std::string ihdr;
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit, RGB, deflate, no filter, no interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", z);
  detail::put_chunk(out, "IEND", "");
  return out;
}

inline void write_png(const RgbImage& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png(img));
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

/// Three channels of a volume shown as R, G, B with values clamped to [0, 1].
inline RgbImage false_color(const Volume<float>& v) {
  RgbImage img(v.width, v.height);
  for (int y = 0; y < v.height; ++y)
    for (int x = 0; x < v.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x)[c] = to_byte(v.at(std::min(c, v.channels - 1), y, x));
  return img;
}

/// Grayscale rendering of a scalar map, min-max stretched.
inline RgbImage heatmap(const Grid<float>& g) {
  RgbImage img(g.width, g.height);
  const auto [lo, hi] = std::minmax_element(g.data.begin(), g.data.end());
  const double range = *hi - *lo;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const std::uint8_t b = to_byte(range > 0 ? (g.at(y, x) - *lo) / range : 0.0);
      std::fill_n(img.at(y, x), 3, b);
    }
  return img;
}

/// Side-by-side concatenation with a `gap`-pixel white separator.
inline RgbImage hconcat(const std::vector<RgbImage>& parts, int gap = 4) {
  int w = 0, h = 0;
  for (const auto& p : parts) {
    w += p.width;
    h = std::max(h, p.height);
  }
  w += gap * static_cast<int>(parts.size() > 0 ? parts.size() - 1 : 0);
  RgbImage out(w, h);
  std::fill(out.pixels.begin(), out.pixels.end(), 255);
  int x0 = 0;
  for (const auto& p : parts) {
    for (int y = 0; y < p.height; ++y) std::copy_n(p.at(y, 0), p.width * 3, out.at(y, x0));
    x0 += p.width + gap;
  }
  return out;
}

}  // namespace vqburn
