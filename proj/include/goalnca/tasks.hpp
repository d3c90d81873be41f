#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "goalnca/error.hpp"
#include "goalnca/grid.hpp"
#include "goalnca/image_io.hpp"
#include "goalnca/loss.hpp"

namespace goalnca {

/// Locomotion goals, in goal-id order.
enum class Direction { stay = 0, up = 1, down = 2, left = 3, right = 4 };

inline constexpr int kDirectionCount = 5;
inline constexpr int kStepsPerPixel = 8;

inline constexpr std::array<std::string_view, kDirectionCount> kDirectionNames = {
    "stay", "up", "down", "left", "right"};

inline std::string_view to_string(Direction d) { return kDirectionNames[static_cast<int>(d)]; }

inline std::optional<Direction> parse_direction(std::string_view s) {
  for (int i = 0; i < kDirectionCount; ++i) {
    if (kDirectionNames[i] == s) return static_cast<Direction>(i);
  }
  return std::nullopt;
}

struct PixelOffset {
  int dx = 0;
  int dy = 0;

  PixelOffset& operator+=(PixelOffset o) noexcept {
    dx += o.dx;
    dy += o.dy;
    return *this;
  }
  friend PixelOffset operator+(PixelOffset a, PixelOffset b) noexcept { return a += b; }
  friend bool operator==(PixelOffset, PixelOffset) = default;
};

/// round(num_steps / 8) with ties to even, as a non-negative integer.
constexpr int steps_to_pixels(int num_steps) noexcept {
  const int q = num_steps / kStepsPerPixel;
  const int r = num_steps % kStepsPerPixel;
  if (r * 2 > kStepsPerPixel) return q + 1;
  if (r * 2 == kStepsPerPixel) return q + (q & 1);
  return q;
}

/// Target displacement for moving in `d` for `num_steps` steps. x grows to
/// the right, y grows downward, so "up" is negative y.
constexpr PixelOffset direction_to_delta(Direction d, int num_steps) noexcept {
  const int m = steps_to_pixels(num_steps);
  switch (d) {
    case Direction::up: return {0, -m};
    case Direction::down: return {0, m};
    case Direction::left: return {-m, 0};
    case Direction::right: return {m, 0};
    case Direction::stay: break;
  }
  return {0, 0};
}

/// Integer translation with zero fill.
template <class T>
CellGrid<T> shift_image(const CellGrid<T>& img, int dx, int dy) {
  if (std::abs(dx) >= img.width || std::abs(dy) >= img.height) {
    throw dimension_error("shift (" + std::to_string(dx) + "," + std::to_string(dy) +
                          ") exceeds image " + std::to_string(img.width) + "x" +
                          std::to_string(img.height));
  }
  CellGrid<T> out(img.channels, img.height, img.width);
  const int x0 = std::max(0, dx);
  const int x1 = std::min(img.width, img.width + dx);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = std::max(0, dy); y < std::min(img.height, img.height + dy); ++y) {
      const T* src = &img.at(c, y - dy, 0);
      T* dst = &out.at(c, y, 0);
      for (int x = x0; x < x1; ++x) dst[x] = src[x - dx];
    }
  }
  return out;
}

template <class T>
CellGrid<T> shift_image(const CellGrid<T>& img, PixelOffset o) {
  return shift_image(img, o.dx, o.dy);
}

/// Inclusive bounding box of pixels with alpha > 0.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool empty() const noexcept { return x1 < x0 || y1 < y0; }
};

template <class T>
BoundingBox content_bounds(const CellGrid<T>& img) {
  BoundingBox b{img.width, img.height, -1, -1};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.at(kAlphaChannel, y, x) > T(0)) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
    }
  }
  return b;
}

/// True when the content box moved by `o` keeps `margin` pixels to every edge.
inline bool offset_within_margin(const BoundingBox& b, PixelOffset o, int width, int height,
                                 int margin) {
  if (b.empty()) return true;
  return b.x0 + o.dx >= margin && b.x1 + o.dx <= width - 1 - margin &&
         b.y0 + o.dy >= margin && b.y1 + o.dy <= height - 1 - margin;
}

/// 8-bit straight-alpha RGBA -> 4 x H x W floats in [0, 1], RGB premultiplied.
inline RgbaImage rgba_from_bytes(const Rgba8& src) {
  RgbaImage img(kRgbaChannels, src.height, src.width);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const auto* px = &src.pixels[(static_cast<std::size_t>(y) * src.width + x) * 4];
      const float a = px[3] / 255.0f;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = px[c] / 255.0f * a;
      img.at(kAlphaChannel, y, x) = a;
    }
  }
  return img;
}

/// Area-averaging resize (each output pixel integrates its footprint).
inline RgbaImage resize_area(const RgbaImage& src, int out_h, int out_w) {
  RgbaImage out(src.channels, out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy0 = oy * sy, fy1 = (oy + 1) * sy;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx0 = ox * sx, fx1 = (ox + 1) * sx;
      std::array<double, 8> acc{};
      for (int y = static_cast<int>(fy0); y < std::min<int>(src.height, static_cast<int>(std::ceil(fy1))); ++y) {
        const double wy = std::min<double>(y + 1, fy1) - std::max<double>(y, fy0);
        if (wy <= 0) continue;
        for (int x = static_cast<int>(fx0); x < std::min<int>(src.width, static_cast<int>(std::ceil(fx1))); ++x) {
          const double wx = std::min<double>(x + 1, fx1) - std::max<double>(x, fx0);
          if (wx <= 0) continue;
          for (int c = 0; c < src.channels; ++c) acc[c] += wy * wx * src.at(c, y, x);
        }
      }
      for (int c = 0; c < src.channels; ++c) {
        out.at(c, oy, ox) = static_cast<float>(acc[c] / (sy * sx));
      }
    }
  }
  return out;
}

/// Places `src` centered on a canvas, cropping or zero-padding as needed.
inline RgbaImage center_on_canvas(const RgbaImage& src, int height, int width) {
  RgbaImage out(src.channels, height, width);
  const int oy = (height - src.height) / 2;
  const int ox = (width - src.width) / 2;
  for (int c = 0; c < src.channels; ++c) {
    for (int y = 0; y < src.height; ++y) {
      const int ty = y + oy;
      if (ty < 0 || ty >= height) continue;
      for (int x = 0; x < src.width; ++x) {
        const int tx = x + ox;
        if (tx < 0 || tx >= width) continue;
        out.at(c, ty, tx) = src.at(c, y, x);
      }
    }
  }
  return out;
}

struct EmojiDataset {
  std::vector<std::string> names;
  std::vector<RgbaImage> images;

  int n_goals() const noexcept { return static_cast<int>(images.size()); }

  int index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    throw goal_error("no target named '" + std::string(name) + "'");
  }
};

struct DatasetOptions {
  int canvas = 64;        // output is canvas x canvas
  int content = 0;        // resize source to content x content first; 0 keeps size
  std::vector<std::string> names;  // file stems to load, in goal order; empty = all, sorted
};

inline RgbaImage load_target(const std::filesystem::path& file, const DatasetOptions& opt) {
  RgbaImage img = rgba_from_bytes(read_png(file));
  if (opt.content > 0 && (img.height != opt.content || img.width != opt.content)) {
    img = resize_area(img, opt.content, opt.content);
  }
  img = center_on_canvas(img, opt.canvas, opt.canvas);
  if (img.channels != kRgbaChannels || img.height != opt.canvas || img.width != opt.canvas) {
    throw dimension_error("target " + file.string() + " is not 4x" + std::to_string(opt.canvas) +
                          "x" + std::to_string(opt.canvas) + " after padding");
  }
  return img;
}

/// Loads every PNG in `dir` (or the named subset) as a premultiplied RGBA
/// target on a square canvas.
inline EmojiDataset load_emoji_dataset(const std::filesystem::path& dir,
                                       const DatasetOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw io_error("data directory not found: " + dir.string());
  std::vector<fs::path> files;
  if (opt.names.empty()) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    for (const auto& n : opt.names) {
      fs::path p = dir / (n + ".png");
      if (!fs::exists(p)) throw io_error("missing target image " + p.string());
      files.push_back(p);
    }
  }
  if (files.empty()) throw io_error("no PNG images in " + dir.string());
  EmojiDataset ds;
  for (const auto& f : files) {
    ds.names.push_back(f.stem().string());
    ds.images.push_back(load_target(f, opt));
  }
  return ds;
}

}  // namespace goalnca
