#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "goalnca/error.hpp"
#include "goalnca/grid.hpp"
#include "goalnca/params.hpp"
#include "goalnca/rng.hpp"

namespace goalnca {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct StepConfig {
  double fire_rate = 1.0;  // probability that a cell applies its update
  double goal_rate = 1.0;  // probability that a live cell receives the goal perturbation

  void validate() const {
    if (!(fire_rate >= 0.0 && fire_rate <= 1.0)) {
      throw config_error("fire_rate " + std::to_string(fire_rate) + " out of [0,1]");
    }
    if (!(goal_rate >= 0.0 && goal_rate <= 1.0)) {
      throw config_error("goal_rate " + std::to_string(goal_rate) + " out of [0,1]");
    }
  }
};

/// Pre-activations of the mlp3 goal encoder, kept for the reverse pass.
template <class T>
struct EncoderTrace {
  std::vector<T> z1;
  std::vector<T> z2;
};

/// Everything the reverse pass needs from one update step.
template <class T>
struct StepRecord {
  CellGrid<T> input;                   // state before the perturbation
  AliveMask pre_alive;
  std::vector<std::uint8_t> perturbed;  // live cells that received the goal vector
  std::vector<std::uint8_t> fired;      // stochastic update mask (all cells)
  std::vector<int> active;              // pre-alive fired cells, raster order
  RowMatrix<T> features;                // [active][3C]
  RowMatrix<T> z1, z2, z3;              // layer pre-activations, [active][*]
  CellGrid<T> pre_clip;
  AliveMask post_alive;
};

/// Recorded forward pass of one rollout segment (a single goal).
template <class T>
struct Tape {
  int goal_id = -1;
  std::vector<T> perturbation;
  EncoderTrace<T> encoder;
  std::vector<StepRecord<T>> steps;

  bool empty() const noexcept { return steps.empty(); }
};

template <class T>
std::vector<T> encode_goal(const GoalEncoder<T>& enc, int goal_id,
                           EncoderTrace<T>* trace = nullptr) {
  if (goal_id < 0 || goal_id >= enc.n_goals) {
    throw goal_error("goal id " + std::to_string(goal_id) + " out of range [0," +
                     std::to_string(enc.n_goals) + ")");
  }
  const int nh = enc.n_hidden;
  if (enc.kind == EncoderKind::embedding) {
    const auto* row = enc.table.data() + static_cast<std::size_t>(goal_id) * nh;
    return std::vector<T>(row, row + nh);
  }
  constexpr int E = kEncoderWidth;
  std::vector<T> z1(E), h1(E), z2(E), h2(E), out(nh);
  for (int j = 0; j < E; ++j) {
    z1[j] = enc.w1[goal_id * E + j] + enc.b1[j];
    h1[j] = z1[j] > T(0) ? z1[j] : T(0);
  }
  for (int j = 0; j < E; ++j) {
    T s = enc.b2[j];
    for (int i = 0; i < E; ++i) s += h1[i] * enc.w2[i * E + j];
    z2[j] = s;
    h2[j] = s > T(0) ? s : T(0);
  }
  for (int j = 0; j < nh; ++j) {
    T s = enc.b3[j];
    for (int i = 0; i < E; ++i) s += h2[i] * enc.w3[i * nh + j];
    out[j] = s;
  }
  if (trace) {
    trace->z1 = std::move(z1);
    trace->z2 = std::move(z2);
  }
  return out;
}

/// Adds `pvec` to the hidden channels of every live cell whose Bernoulli
/// (goal_rate) draw succeeds. One draw per cell is consumed when
/// 0 < goal_rate < 1, none otherwise.
template <class T>
CellGrid<T> perturb_hidden(CellGrid<T> grid, std::span<const T> pvec,
                           const AliveMask& mask, double goal_rate, RngStream& rng) {
  if (static_cast<int>(pvec.size()) != grid.n_hidden()) {
    throw dimension_error("perturbation length " + std::to_string(pvec.size()) +
                          " != hidden channels " + std::to_string(grid.n_hidden()));
  }
  const int n = grid.cells();
  const bool draw = goal_rate > 0.0 && goal_rate < 1.0;
  for (int i = 0; i < n; ++i) {
    const bool take = draw ? rng.bernoulli(goal_rate) : goal_rate >= 1.0;
    if (!take || !mask[i]) continue;
    for (int h = 0; h < grid.n_hidden(); ++h) grid.channel(kRgbaChannels + h)[i] += pvec[h];
  }
  return grid;
}

namespace detail {

/// Perception features of cell (y, x) into out[0 .. 3C).
template <class T>
void perceive_cell(const CellGrid<T>& g, const NcaParams<T>& p, int y, int x, T* out) {
  const int h = g.height;
  const int w = g.width;
  for (int c = 0; c < g.channels; ++c) {
    const T* ch = g.data.data() + static_cast<std::size_t>(c) * g.cells();
    T v[kKernelTaps];
    int t = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      const int yy = y + dy;
      for (int dx = -1; dx <= 1; ++dx, ++t) {
        const int xx = x + dx;
        v[t] = (yy >= 0 && yy < h && xx >= 0 && xx < w) ? ch[yy * w + xx] : T(0);
      }
    }
    for (int k = 0; k < kPerceptionKernels; ++k) {
      const int f = c * kPerceptionKernels + k;
      const T* kern = p.perception_w.data() + f * kKernelTaps;
      T s = p.perception_b[f];
      for (int i = 0; i < kKernelTaps; ++i) s += kern[i] * v[i];
      out[f] = s;
    }
  }
}

template <class T>
void check_params(const CellGrid<T>& g, const NcaParams<T>& p) {
  if (g.channels != p.channels) {
    throw dimension_error("grid has " + std::to_string(g.channels) +
                          " channels but parameters expect " + std::to_string(p.channels));
  }
}

inline std::vector<std::uint8_t> draw_mask(int n, double rate, RngStream& rng) {
  std::vector<std::uint8_t> m(n, rate >= 1.0 ? 1 : 0);
  if (rate > 0.0 && rate < 1.0) {
    for (int i = 0; i < n; ++i) m[i] = rng.bernoulli(rate) ? 1 : 0;
  }
  return m;
}

/// One update step with the stochastic masks already drawn. `perturb_draw`
/// and `fire_draw` hold one entry per cell.
template <class T>
CellGrid<T> step_with_masks(const CellGrid<T>& x, const NcaParams<T>& params,
                            std::span<const T> pvec,
                            std::vector<std::uint8_t> perturb_draw,
                            std::vector<std::uint8_t> fire_draw, StepRecord<T>* rec) {
  const int n = x.cells();
  const int C = x.channels;
  const int F = params.features();

  AliveMask pre = alive_mask(x);
  CellGrid<T> state = x;
  for (int i = 0; i < n; ++i) {
    perturb_draw[i] = perturb_draw[i] && pre[i];
    if (!perturb_draw[i]) continue;
    for (int h = 0; h < x.n_hidden(); ++h) state.channel(kRgbaChannels + h)[i] += pvec[h];
  }

  std::vector<int> active;
  active.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (pre[i] && fire_draw[i]) active.push_back(i);
  }
  const int m = static_cast<int>(active.size());

  RowMatrix<T> feat(m, F);
  for (int r = 0; r < m; ++r) {
    perceive_cell(state, params, active[r] / x.width, active[r] % x.width, feat.row(r).data());
  }

  using Map = Eigen::Map<const RowMatrix<T>>;
  using RowVec = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
  const Map w1(params.w1.data(), F, kUpdateWidth);
  const Map w2(params.w2.data(), kUpdateWidth, kUpdateWidth);
  const Map w3(params.w3.data(), kUpdateWidth, C);
  const RowVec b1(params.b1.data(), kUpdateWidth);
  const RowVec b2(params.b2.data(), kUpdateWidth);
  const RowVec b3(params.b3.data(), C);

  RowMatrix<T> z1, z2, z3;
  if (m > 0) {
    z1.noalias() = feat * w1;
    z1.rowwise() += b1;
    z2.noalias() = z1.cwiseMax(T(0)) * w2;
    z2.rowwise() += b2;
    z3.noalias() = z2.cwiseMax(T(0)) * w3;
    z3.rowwise() += b3;
  } else {
    z1.resize(0, kUpdateWidth);
    z2.resize(0, kUpdateWidth);
    z3.resize(0, C);
  }

  CellGrid<T> y = state;
  for (int r = 0; r < m; ++r) {
    const int i = active[r];
    for (int c = 0; c < C; ++c) y.data[static_cast<std::size_t>(c) * n + i] += z3(r, c);
  }

  AliveMask post = alive_mask(y);
  CellGrid<T> out = y;
  AliveMask keep(x.height, x.width);
  for (int i = 0; i < n; ++i) keep.bits[i] = pre[i] && post[i];
  apply_alive_and_clip_inplace(out, keep);

  if (rec) {
    rec->input = x;
    rec->pre_alive = std::move(pre);
    rec->perturbed = std::move(perturb_draw);
    rec->fired = std::move(fire_draw);
    rec->active = std::move(active);
    rec->features = std::move(feat);
    rec->z1 = std::move(z1);
    rec->z2 = std::move(z2);
    rec->z3 = std::move(z3);
    rec->pre_clip = std::move(y);
    rec->post_alive = std::move(post);
  }
  return out;
}

}  // namespace detail

/// Depthwise 3x3 perception over the whole grid: 3 kernels per channel plus
/// bias, zero padding. Output has 3C channels, feature c * 3 + k.
template <class T>
CellGrid<T> perceive(const CellGrid<T>& grid, const NcaParams<T>& params) {
  detail::check_params(grid, params);
  const int F = params.features();
  CellGrid<T> out(F, grid.height, grid.width);
  std::vector<T> buf(F);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      detail::perceive_cell(grid, params, y, x, buf.data());
      for (int f = 0; f < F; ++f) out.at(f, y, x) = buf[f];
    }
  }
  return out;
}

/// One update step:
///   1. alive mask of the input
///   2. goal perturbation of live hidden state
///   3. perception
///   4. 1x1 layers (rectifier after the first two) give a C-channel update
///   5. update kept only where the cell fires and was alive
///   6. state += update
///   7. alive mask of the result
///   8. cells alive both before and after survive, clipped to [-10, 10]
/// Draw order: goal mask then fire mask, one draw per cell each, skipped when
/// the corresponding rate is 0 or 1.
template <class T>
CellGrid<T> nca_step(const CellGrid<T>& grid, const NcaParams<T>& params,
                     std::span<const T> pvec, const StepConfig& cfg, RngStream& rng,
                     StepRecord<T>* rec = nullptr) {
  detail::check_params(grid, params);
  if (static_cast<int>(pvec.size()) != grid.n_hidden()) {
    throw dimension_error("perturbation length " + std::to_string(pvec.size()) +
                          " != hidden channels " + std::to_string(grid.n_hidden()));
  }
  auto perturb = detail::draw_mask(grid.cells(), cfg.goal_rate, rng);
  auto fire = detail::draw_mask(grid.cells(), cfg.fire_rate, rng);
  return detail::step_with_masks(grid, params, pvec, std::move(perturb), std::move(fire), rec);
}

/// Runs `n_steps` updates under one goal. The goal is encoded once. When a
/// tape is given, its records are appended; a non-empty tape must belong to
/// the same goal.
template <class T>
CellGrid<T> rollout(CellGrid<T> grid, const NcaParams<T>& params, const GoalEncoder<T>& enc,
                    int goal_id, int n_steps, const StepConfig& cfg, RngStream& rng,
                    Tape<T>* tape = nullptr) {
  cfg.validate();
  if (n_steps < 0) throw config_error("n_steps must be non-negative");
  if (enc.n_hidden != grid.n_hidden()) {
    throw dimension_error("encoder emits " + std::to_string(enc.n_hidden) +
                          " hidden values but grid has " + std::to_string(grid.n_hidden()));
  }
  EncoderTrace<T> trace;
  const std::vector<T> pvec = encode_goal(enc, goal_id, &trace);
  if (tape) {
    if (!tape->empty() && tape->goal_id != goal_id) {
      throw goal_error("tape holds goal " + std::to_string(tape->goal_id) +
                       ", cannot append goal " + std::to_string(goal_id));
    }
    tape->goal_id = goal_id;
    tape->perturbation = pvec;
    tape->encoder = std::move(trace);
    tape->steps.reserve(tape->steps.size() + n_steps);
  }
  for (int s = 0; s < n_steps; ++s) {
    StepRecord<T>* rec = nullptr;
    if (tape) rec = &tape->steps.emplace_back();
    grid = nca_step(grid, params, std::span<const T>(pvec), cfg, rng, rec);
  }
  return grid;
}

/// Re-executes a tape's steps from its first input with the recorded
/// stochastic masks. Used to verify that a tape is self-consistent.
template <class T>
CellGrid<T> replay(const Tape<T>& tape, const NcaParams<T>& params) {
  if (tape.empty()) return {};
  CellGrid<T> g = tape.steps.front().input;
  for (const auto& rec : tape.steps) {
    g = detail::step_with_masks(g, params, std::span<const T>(tape.perturbation),
                                rec.perturbed, rec.fired, static_cast<StepRecord<T>*>(nullptr));
  }
  return g;
}

}  // namespace goalnca
