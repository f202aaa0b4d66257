#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vqburn {

/// Dense channel-major 3-D array [channels][height][width].
template <typename T>
struct Volume {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Volume() = default;
  Volume(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }

  T& at(int c, int y, int x) { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  const T& at(int c, int y, int x) const { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }

  std::span<T> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }

  bool same_shape(const Volume& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename U>
  Volume<U> cast() const {
    Volume<U> out(channels, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  friend bool operator==(const Volume&, const Volume&) = default;
};

/// Dense row-major 2-D array used for per-pixel maps.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return data.size(); }
  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace vqburn
