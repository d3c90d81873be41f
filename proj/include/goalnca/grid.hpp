#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "goalnca/error.hpp"

namespace goalnca {

inline constexpr int kRgbaChannels = 4;
inline constexpr int kAlphaChannel = 3;
inline constexpr double kAliveThreshold = 0.1;
inline constexpr double kStateBound = 10.0;

/// Dense C x H x W cell state. Channels 0-2 are RGB, channel 3 is alpha (the
/// living channel), channels 4.. are hidden state. Storage is channel-major,
/// then row-major: data[(c * H + y) * W + x].
template <class T = float>
struct CellGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  CellGrid() = default;
  CellGrid(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, T(0)) {}

  int cells() const noexcept { return height * width; }
  int n_hidden() const noexcept { return channels - kRgbaChannels; }

  T& at(int c, int y, int x) noexcept { return data[index(c, y, x)]; }
  const T& at(int c, int y, int x) const noexcept { return data[index(c, y, x)]; }

  std::span<T> channel(int c) noexcept {
    return {data.data() + static_cast<std::size_t>(c) * cells(),
            static_cast<std::size_t>(cells())};
  }
  std::span<const T> channel(int c) const noexcept {
    return {data.data() + static_cast<std::size_t>(c) * cells(),
            static_cast<std::size_t>(cells())};
  }

  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }

  template <class U>
  CellGrid<U> cast() const {
    CellGrid<U> out(channels, height, width);
    std::transform(data.begin(), data.end(), out.data.begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool same_shape(const CellGrid& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const CellGrid&, const CellGrid&) = default;
};

/// Per-cell liveness: a cell is alive iff the maximum alpha over its 3x3
/// neighborhood (zero outside the grid) is at least 0.1.
struct AliveMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  AliveMask() = default;
  AliveMask(int h, int w, bool value = false)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * w, value ? 1 : 0) {}

  bool operator()(int y, int x) const noexcept { return bits[y * width + x] != 0; }
  bool operator[](int cell) const noexcept { return bits[cell] != 0; }
  int count() const noexcept {
    return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }

  friend bool operator==(const AliveMask&, const AliveMask&) = default;
};

template <class T = float>
CellGrid<T> new_seed(int height, int width, int n_hidden) {
  if (height < 3 || width < 3) {
    throw dimension_error("seed grid must be at least 3x3, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  if (n_hidden < 1) {
    throw dimension_error("seed needs at least one hidden channel, got " +
                          std::to_string(n_hidden));
  }
  CellGrid<T> g(kRgbaChannels + n_hidden, height, width);
  const int cy = height / 2;
  const int cx = width / 2;
  for (int c = kAlphaChannel; c < g.channels; ++c) g.at(c, cy, cx) = T(1);
  return g;
}

template <class T>
AliveMask alive_mask(const CellGrid<T>& grid) {
  const int h = grid.height;
  const int w = grid.width;
  const auto alpha = grid.channel(kAlphaChannel);
  const T threshold = static_cast<T>(kAliveThreshold);

  // Separable max: rows first, then columns. Out-of-bounds cells count as 0.
  std::vector<T> row_max(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const T* a = alpha.data() + y * w;
    T* r = row_max.data() + y * w;
    for (int x = 0; x < w; ++x) {
      T m = a[x];
      if (x > 0) m = std::max(m, a[x - 1]);
      if (x + 1 < w) m = std::max(m, a[x + 1]);
      r[x] = m;
    }
  }
  AliveMask mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T m = row_max[y * w + x];
      if (y > 0) m = std::max(m, row_max[(y - 1) * w + x]);
      if (y + 1 < h) m = std::max(m, row_max[(y + 1) * w + x]);
      mask.bits[y * w + x] = m >= threshold ? 1 : 0;
    }
  }
  return mask;
}

template <class T>
T clip_state(T v) noexcept {
  return std::clamp(v, static_cast<T>(-kStateBound), static_cast<T>(kStateBound));
}

/// Zeroes dead cells across all channels and clamps the rest to [-10, 10].
template <class T>
void apply_alive_and_clip_inplace(CellGrid<T>& grid, const AliveMask& mask) {
  if (mask.height != grid.height || mask.width != grid.width) {
    throw dimension_error("alive mask " + std::to_string(mask.height) + "x" +
                          std::to_string(mask.width) + " does not match grid " +
                          std::to_string(grid.height) + "x" +
                          std::to_string(grid.width));
  }
  const int n = grid.cells();
  for (int c = 0; c < grid.channels; ++c) {
    auto ch = grid.channel(c);
    for (int i = 0; i < n; ++i) ch[i] = mask[i] ? clip_state(ch[i]) : T(0);
  }
}

template <class T>
CellGrid<T> apply_alive_and_clip(CellGrid<T> grid, const AliveMask& mask) {
  apply_alive_and_clip_inplace(grid, mask);
  return grid;
}

}  // namespace goalnca
