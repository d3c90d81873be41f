#pragma once

#include <string>

#include "goalnca/error.hpp"
#include "goalnca/grid.hpp"

namespace goalnca {

/// 4 x H x W image, RGB premultiplied by alpha, values in [0, 1].
using RgbaImage = CellGrid<float>;

template <class T, class U>
void check_rgba_target(const CellGrid<T>& grid, const CellGrid<U>& target) {
  if (target.channels != kRgbaChannels || grid.channels < kRgbaChannels ||
      target.height != grid.height || target.width != grid.width) {
    throw dimension_error("target " + std::to_string(target.channels) + "x" +
                          std::to_string(target.height) + "x" + std::to_string(target.width) +
                          " does not match grid RGBA " + std::to_string(grid.height) + "x" +
                          std::to_string(grid.width));
  }
}

/// Mean squared error over channels 0-3, accumulated in double.
template <class T, class U>
double mse_rgba(const CellGrid<T>& grid, const CellGrid<U>& target) {
  check_rgba_target(grid, target);
  const std::size_t n = static_cast<std::size_t>(kRgbaChannels) * grid.cells();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(grid.data[i]) - static_cast<double>(target.data[i]);
    s += d * d;
  }
  return s / static_cast<double>(n);
}

/// d(scale * mse_rgba)/d(grid); zero on hidden channels.
template <class T, class U>
CellGrid<T> mse_rgba_grad(const CellGrid<T>& grid, const CellGrid<U>& target,
                          double scale = 1.0) {
  check_rgba_target(grid, target);
  CellGrid<T> g(grid.channels, grid.height, grid.width);
  const std::size_t n = static_cast<std::size_t>(kRgbaChannels) * grid.cells();
  const double k = 2.0 * scale / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.data[i] = static_cast<T>(k * (static_cast<double>(grid.data[i]) -
                                    static_cast<double>(target.data[i])));
  }
  return g;
}

}  // namespace goalnca
