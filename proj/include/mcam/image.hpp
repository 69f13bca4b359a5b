#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcam {

// Row-major single-channel raster.
template <typename T>
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h, fill) {}

  std::size_t size() const { return data.size(); }
  T& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  bool same_size(std::size_t w, std::size_t h) const { return width == w && height == h; }
  template <typename U>
  bool same_size(const Grid<U>& o) const { return width == o.width && height == o.height; }
  bool operator==(const Grid&) const = default;
};

using LabelMap = Grid<std::uint16_t>;  // 0 = background, 1..K = instances
using DepthMap = Grid<float>;          // larger = nearer the camera
using BinaryMap = Grid<std::uint8_t>;  // 0 or 1

// Interleaved 8-bit RGB.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), data(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

template <typename A, typename B>
void require_same_size(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_size(b)) {
    throw std::invalid_argument(std::string(what) + ": size mismatch " + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height));
  }
}

}  // namespace mcam
