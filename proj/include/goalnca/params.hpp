#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "goalnca/error.hpp"
#include "goalnca/grid.hpp"
#include "goalnca/rng.hpp"

namespace goalnca {

inline constexpr int kPerceptionKernels = 3;  // 3x3 kernels per cell channel
inline constexpr int kKernelTaps = 9;
inline constexpr int kUpdateWidth = 64;       // width of the 1x1 layers
inline constexpr int kEncoderWidth = 32;      // hidden width of the MLP goal encoder

/// Named view of one flat parameter array together with its logical shape.
template <class T>
struct ArrayRef {
  std::string_view name;
  std::span<T> values;
  std::vector<int> shape;
};

/// Closed-form parameter count of the update network for C cell channels.
constexpr std::size_t nca_parameter_count(int c) {
  const std::size_t C = static_cast<std::size_t>(c);
  const std::size_t W = kUpdateWidth;
  return 27 * C + 3 * C + (3 * C * W + W) + (W * W + W) + (W * C + C);
}

/// Update-network weights. Perception is a depthwise 3x3 convolution with
/// three kernels per channel; feature index is c * 3 + k. The three 1x1
/// layers are stored row-major as (inputs x outputs).
template <class T = float>
struct NcaParams {
  int channels = 0;
  std::vector<T> perception_w;  // [3C][9], tap index (dy + 1) * 3 + (dx + 1)
  std::vector<T> perception_b;  // [3C]
  std::vector<T> w1;            // [3C][64]
  std::vector<T> b1;            // [64]
  std::vector<T> w2;            // [64][64]
  std::vector<T> b2;            // [64]
  std::vector<T> w3;            // [64][C]
  std::vector<T> b3;            // [C]

  static NcaParams zeros(int c) {
    NcaParams p;
    const auto C = static_cast<std::size_t>(c);
    p.channels = c;
    p.perception_w.assign(3 * C * kKernelTaps, T(0));
    p.perception_b.assign(3 * C, T(0));
    p.w1.assign(3 * C * kUpdateWidth, T(0));
    p.b1.assign(kUpdateWidth, T(0));
    p.w2.assign(kUpdateWidth * kUpdateWidth, T(0));
    p.b2.assign(kUpdateWidth, T(0));
    p.w3.assign(kUpdateWidth * C, T(0));
    p.b3.assign(C, T(0));
    return p;
  }

  int features() const noexcept { return kPerceptionKernels * channels; }

  std::vector<ArrayRef<T>> arrays() {
    const int f = features();
    return {{"perception_w", perception_w, {f, kKernelTaps}},
            {"perception_b", perception_b, {f}},
            {"w1", w1, {f, kUpdateWidth}},
            {"b1", b1, {kUpdateWidth}},
            {"w2", w2, {kUpdateWidth, kUpdateWidth}},
            {"b2", b2, {kUpdateWidth}},
            {"w3", w3, {kUpdateWidth, channels}},
            {"b3", b3, {channels}}};
  }
  std::vector<ArrayRef<const T>> arrays() const {
    const int f = features();
    return {{"perception_w", perception_w, {f, kKernelTaps}},
            {"perception_b", perception_b, {f}},
            {"w1", w1, {f, kUpdateWidth}},
            {"b1", b1, {kUpdateWidth}},
            {"w2", w2, {kUpdateWidth, kUpdateWidth}},
            {"b2", b2, {kUpdateWidth}},
            {"w3", w3, {kUpdateWidth, channels}},
            {"b3", b3, {channels}}};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays()) n += a.values.size();
    return n;
  }

  template <class U>
  NcaParams<U> cast() const {
    NcaParams<U> out;
    out.channels = channels;
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    out.perception_w = conv(perception_w);
    out.perception_b = conv(perception_b);
    out.w1 = conv(w1);
    out.b1 = conv(b1);
    out.w2 = conv(w2);
    out.b2 = conv(b2);
    out.w3 = conv(w3);
    out.b3 = conv(b3);
    return out;
  }

  friend bool operator==(const NcaParams&, const NcaParams&) = default;
};

enum class EncoderKind { embedding, mlp3 };

inline std::string_view to_string(EncoderKind k) {
  return k == EncoderKind::embedding ? "embedding" : "mlp3";
}

inline EncoderKind encoder_kind_from_string(std::string_view s) {
  if (s == "embedding") return EncoderKind::embedding;
  if (s == "mlp3") return EncoderKind::mlp3;
  throw config_error("unknown encoder variant '" + std::string(s) +
                     "' (expected embedding or mlp3)");
}

/// Maps a one-hot goal to a hidden-state perturbation. The embedding variant
/// is a plain table; mlp3 is n_goals -> 32 -> 32 -> n_hidden with rectifiers
/// after the first two layers.
template <class T = float>
struct GoalEncoder {
  EncoderKind kind = EncoderKind::embedding;
  int n_goals = 0;
  int n_hidden = 0;
  std::vector<T> table;  // embedding: [n_goals][n_hidden]
  std::vector<T> w1;     // mlp3: [n_goals][32]
  std::vector<T> b1;
  std::vector<T> w2;     // [32][32]
  std::vector<T> b2;
  std::vector<T> w3;     // [32][n_hidden]
  std::vector<T> b3;

  static GoalEncoder zeros(EncoderKind kind, int n_goals, int n_hidden) {
    GoalEncoder e;
    e.kind = kind;
    e.n_goals = n_goals;
    e.n_hidden = n_hidden;
    const auto G = static_cast<std::size_t>(n_goals);
    const auto Hd = static_cast<std::size_t>(n_hidden);
    const std::size_t E = kEncoderWidth;
    if (kind == EncoderKind::embedding) {
      e.table.assign(G * Hd, T(0));
    } else {
      e.w1.assign(G * E, T(0));
      e.b1.assign(E, T(0));
      e.w2.assign(E * E, T(0));
      e.b2.assign(E, T(0));
      e.w3.assign(E * Hd, T(0));
      e.b3.assign(Hd, T(0));
    }
    return e;
  }

  std::vector<ArrayRef<T>> arrays() {
    if (kind == EncoderKind::embedding) return {{"enc.table", table, {n_goals, n_hidden}}};
    return {{"enc.w1", w1, {n_goals, kEncoderWidth}},
            {"enc.b1", b1, {kEncoderWidth}},
            {"enc.w2", w2, {kEncoderWidth, kEncoderWidth}},
            {"enc.b2", b2, {kEncoderWidth}},
            {"enc.w3", w3, {kEncoderWidth, n_hidden}},
            {"enc.b3", b3, {n_hidden}}};
  }
  std::vector<ArrayRef<const T>> arrays() const {
    if (kind == EncoderKind::embedding) return {{"enc.table", table, {n_goals, n_hidden}}};
    return {{"enc.w1", w1, {n_goals, kEncoderWidth}},
            {"enc.b1", b1, {kEncoderWidth}},
            {"enc.w2", w2, {kEncoderWidth, kEncoderWidth}},
            {"enc.b2", b2, {kEncoderWidth}},
            {"enc.w3", w3, {kEncoderWidth, n_hidden}},
            {"enc.b3", b3, {n_hidden}}};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays()) n += a.values.size();
    return n;
  }

  template <class U>
  GoalEncoder<U> cast() const {
    GoalEncoder<U> out;
    out.kind = kind;
    out.n_goals = n_goals;
    out.n_hidden = n_hidden;
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    out.table = conv(table);
    out.w1 = conv(w1);
    out.b1 = conv(b1);
    out.w2 = conv(w2);
    out.b2 = conv(b2);
    out.w3 = conv(w3);
    out.b3 = conv(b3);
    return out;
  }

  friend bool operator==(const GoalEncoder&, const GoalEncoder&) = default;
};

namespace detail {

template <class T>
void fill_uniform(std::vector<T>& v, double bound, RngStream& rng) {
  for (auto& x : v) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
}

}  // namespace detail

/// Fresh update network. Perception starts as (identity, Sobel-x, Sobel-y) per
/// channel, the hidden layers use fan-in scaled uniform weights and the output
/// layer starts at zero so a fresh network does not change the state.
template <class T = float>
NcaParams<T> init_nca_params(int channels, RngStream& rng) {
  if (channels <= kRgbaChannels) {
    throw dimension_error("update network needs hidden channels, got C=" +
                          std::to_string(channels));
  }
  auto p = NcaParams<T>::zeros(channels);
  constexpr double identity[9] = {0, 0, 0, 0, 1, 0, 0, 0, 0};
  constexpr double sobel_x[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  constexpr double sobel_y[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  const double* kernels[3] = {identity, sobel_x, sobel_y};
  for (int c = 0; c < channels; ++c) {
    for (int k = 0; k < kPerceptionKernels; ++k) {
      const double scale = k == 0 ? 1.0 : 0.125;
      for (int t = 0; t < kKernelTaps; ++t) {
        p.perception_w[(c * kPerceptionKernels + k) * kKernelTaps + t] =
            static_cast<T>(kernels[k][t] * scale);
      }
    }
  }
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(p.features()));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(kUpdateWidth));
  detail::fill_uniform(p.w1, bound1, rng);
  detail::fill_uniform(p.b1, bound1, rng);
  detail::fill_uniform(p.w2, bound2, rng);
  detail::fill_uniform(p.b2, bound2, rng);
  return p;
}

/// `scale` bounds the embedding entries; the mlp3 variant uses fan-in scaling.
template <class T = float>
GoalEncoder<T> init_goal_encoder(EncoderKind kind, int n_goals, int n_hidden,
                                 RngStream& rng, double scale = 0.1) {
  if (n_goals < 1 || n_hidden < 1) {
    throw dimension_error("goal encoder needs n_goals >= 1 and n_hidden >= 1");
  }
  auto e = GoalEncoder<T>::zeros(kind, n_goals, n_hidden);
  if (kind == EncoderKind::embedding) {
    detail::fill_uniform(e.table, scale, rng);
  } else {
    const double b1 = 1.0 / std::sqrt(static_cast<double>(n_goals));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(kEncoderWidth));
    detail::fill_uniform(e.w1, b1, rng);
    detail::fill_uniform(e.b1, b1, rng);
    detail::fill_uniform(e.w2, b2, rng);
    detail::fill_uniform(e.b2, b2, rng);
    detail::fill_uniform(e.w3, b2 * scale, rng);
    detail::fill_uniform(e.b3, b2 * scale, rng);
  }
  return e;
}

}  // namespace goalnca
