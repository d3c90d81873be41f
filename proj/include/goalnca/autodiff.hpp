#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "goalnca/error.hpp"
#include "goalnca/grid.hpp"
#include "goalnca/loss.hpp"
#include "goalnca/model.hpp"
#include "goalnca/params.hpp"
#include "goalnca/rng.hpp"

namespace goalnca {

/// Gradients shaped exactly like the parameters they belong to, plus the
/// gradient with respect to the goal perturbation vector.
template <class T>
struct GradientSet {
  NcaParams<T> nca;
  GoalEncoder<T> encoder;
  std::vector<T> perturbation;

  static GradientSet zeros_like(const NcaParams<T>& p, const GoalEncoder<T>& e) {
    GradientSet g;
    g.nca = NcaParams<T>::zeros(p.channels);
    g.encoder = GoalEncoder<T>::zeros(e.kind, e.n_goals, e.n_hidden);
    g.perturbation.assign(e.n_hidden, T(0));
    return g;
  }

  GradientSet& operator+=(const GradientSet& o) {
    auto dst = nca.arrays();
    auto src = o.nca.arrays();
    for (std::size_t a = 0; a < dst.size(); ++a) {
      for (std::size_t i = 0; i < dst[a].values.size(); ++i) dst[a].values[i] += src[a].values[i];
    }
    auto edst = encoder.arrays();
    auto esrc = o.encoder.arrays();
    for (std::size_t a = 0; a < edst.size(); ++a) {
      for (std::size_t i = 0; i < edst[a].values.size(); ++i) edst[a].values[i] += esrc[a].values[i];
    }
    for (std::size_t i = 0; i < perturbation.size(); ++i) perturbation[i] += o.perturbation[i];
    return *this;
  }
};

namespace detail {

template <class T>
void check_tape(const Tape<T>& tape, const NcaParams<T>& params, const GoalEncoder<T>& enc) {
  if (tape.empty()) return;
  const auto& first = tape.steps.front();
  if (first.input.channels != params.channels) {
    throw dimension_error("tape recorded C=" + std::to_string(first.input.channels) +
                          " but parameters have C=" + std::to_string(params.channels));
  }
  if (static_cast<int>(tape.perturbation.size()) != enc.n_hidden ||
      enc.n_hidden != first.input.n_hidden()) {
    throw dimension_error("tape perturbation length " + std::to_string(tape.perturbation.size()) +
                          " does not match encoder n_hidden " + std::to_string(enc.n_hidden));
  }
  if (tape.goal_id < 0 || tape.goal_id >= enc.n_goals) {
    throw goal_error("tape goal " + std::to_string(tape.goal_id) + " outside encoder range");
  }
  for (const auto& rec : tape.steps) {
    if (rec.features.cols() != params.features() && !rec.active.empty()) {
      throw dimension_error("tape feature width does not match parameters");
    }
  }
}

template <class T>
void encoder_backward(const GoalEncoder<T>& enc, int goal_id, const EncoderTrace<T>& trace,
                      std::span<const T> g_out, GoalEncoder<T>& grad) {
  const int nh = enc.n_hidden;
  if (enc.kind == EncoderKind::embedding) {
    for (int j = 0; j < nh; ++j) grad.table[goal_id * nh + j] += g_out[j];
    return;
  }
  constexpr int E = kEncoderWidth;
  std::vector<T> h1(E), h2(E), g_z2(E), g_z1(E);
  for (int j = 0; j < E; ++j) {
    h1[j] = trace.z1[j] > T(0) ? trace.z1[j] : T(0);
    h2[j] = trace.z2[j] > T(0) ? trace.z2[j] : T(0);
  }
  for (int i = 0; i < E; ++i) {
    T s = 0;
    for (int j = 0; j < nh; ++j) {
      grad.w3[i * nh + j] += h2[i] * g_out[j];
      s += enc.w3[i * nh + j] * g_out[j];
    }
    g_z2[i] = trace.z2[i] > T(0) ? s : T(0);
  }
  for (int j = 0; j < nh; ++j) grad.b3[j] += g_out[j];
  for (int i = 0; i < E; ++i) {
    T s = 0;
    for (int j = 0; j < E; ++j) {
      grad.w2[i * E + j] += h1[i] * g_z2[j];
      s += enc.w2[i * E + j] * g_z2[j];
    }
    g_z1[i] = trace.z1[i] > T(0) ? s : T(0);
  }
  for (int j = 0; j < E; ++j) {
    grad.b2[j] += g_z2[j];
    grad.w1[goal_id * E + j] += g_z1[j];
    grad.b1[j] += g_z1[j];
  }
}

/// Reverse of one update step. `g` holds dL/d(step output) on entry and
/// dL/d(step input) on exit.
template <class T>
void step_backward(const StepRecord<T>& rec, const NcaParams<T>& params,
                   std::span<const T> pvec, CellGrid<T>& g, GradientSet<T>& grads) {
  const int n = rec.input.cells();
  const int C = rec.input.channels;
  const int W = rec.input.width;
  const int H = rec.input.height;
  const int F = params.features();
  const int m = static_cast<int>(rec.active.size());
  const T bound = static_cast<T>(kStateBound);

  // Survival mask and clip. Clip passes gradient strictly inside the bound.
  for (int c = 0; c < C; ++c) {
    T* gc = g.data.data() + static_cast<std::size_t>(c) * n;
    const T* yc = rec.pre_clip.data.data() + static_cast<std::size_t>(c) * n;
    for (int i = 0; i < n; ++i) {
      const bool keep = rec.pre_alive[i] && rec.post_alive[i];
      if (!keep || !(yc[i] > -bound && yc[i] < bound)) gc[i] = T(0);
    }
  }
  if (m > 0) {
    RowMatrix<T> g_u(m, C);
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < C; ++c) g_u(r, c) = g.data[static_cast<std::size_t>(c) * n + rec.active[r]];
    }

    using Map = Eigen::Map<const RowMatrix<T>>;
    using MutMap = Eigen::Map<RowMatrix<T>>;
    using MutRowVec = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
    const Map w1(params.w1.data(), F, kUpdateWidth);
    const Map w2(params.w2.data(), kUpdateWidth, kUpdateWidth);
    const Map w3(params.w3.data(), kUpdateWidth, C);
    MutMap dw1(grads.nca.w1.data(), F, kUpdateWidth);
    MutMap dw2(grads.nca.w2.data(), kUpdateWidth, kUpdateWidth);
    MutMap dw3(grads.nca.w3.data(), kUpdateWidth, C);
    MutRowVec db1(grads.nca.b1.data(), kUpdateWidth);
    MutRowVec db2(grads.nca.b2.data(), kUpdateWidth);
    MutRowVec db3(grads.nca.b3.data(), C);

    // Products land in Eigen-owned temporaries before accumulation: the
    // gradient buffers' alignment would otherwise pick different kernels
    // and change the rounding between runs.
    const RowMatrix<T> h2 = rec.z2.cwiseMax(T(0));
    RowMatrix<T> tmp = h2.transpose() * g_u;
    dw3 += tmp;
    RowMatrix<T> bsum = g_u.colwise().sum();
    db3 += bsum;
    RowMatrix<T> g_z2 = g_u * w3.transpose();
    g_z2 = (rec.z2.array() > T(0)).select(g_z2, T(0));

    const RowMatrix<T> h1 = rec.z1.cwiseMax(T(0));
    tmp = h1.transpose() * g_z2;
    dw2 += tmp;
    bsum = g_z2.colwise().sum();
    db2 += bsum;
    RowMatrix<T> g_z1 = g_z2 * w2.transpose();
    g_z1 = (rec.z1.array() > T(0)).select(g_z1, T(0));

    tmp = rec.features.transpose() * g_z1;
    dw1 += tmp;
    bsum = g_z1.colwise().sum();
    db1 += bsum;
    const RowMatrix<T> g_feat = g_z1 * w1.transpose();

    // Perception: the convolved state is the perturbed input.
    CellGrid<T> state = rec.input;
    for (int i = 0; i < n; ++i) {
      if (!rec.perturbed[i]) continue;
      for (int h = 0; h < rec.input.n_hidden(); ++h) {
        state.data[static_cast<std::size_t>(kRgbaChannels + h) * n + i] += pvec[h];
      }
    }
    for (int r = 0; r < m; ++r) {
      const int y = rec.active[r] / W;
      const int x = rec.active[r] % W;
      for (int c = 0; c < C; ++c) {
        const T* sc = state.data.data() + static_cast<std::size_t>(c) * n;
        T* gc = g.data.data() + static_cast<std::size_t>(c) * n;
        for (int k = 0; k < kPerceptionKernels; ++k) {
          const int f = c * kPerceptionKernels + k;
          const T gf = g_feat(r, f);
          if (gf == T(0)) continue;
          grads.nca.perception_b[f] += gf;
          T* dk = grads.nca.perception_w.data() + f * kKernelTaps;
          const T* kern = params.perception_w.data() + f * kKernelTaps;
          int t = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = y + dy;
            for (int dx = -1; dx <= 1; ++dx, ++t) {
              const int xx = x + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              const int j = yy * W + xx;
              dk[t] += gf * sc[j];
              gc[j] += gf * kern[t];
            }
          }
        }
      }
    }
  }

  // Goal perturbation: state = input + pvec on perturbed hidden channels.
  for (int h = 0; h < rec.input.n_hidden(); ++h) {
    const T* gc = g.data.data() + static_cast<std::size_t>(kRgbaChannels + h) * n;
    T s = 0;
    for (int i = 0; i < n; ++i) {
      if (rec.perturbed[i]) s += gc[i];
    }
    grads.perturbation[h] += s;
  }
}

}  // namespace detail

/// Accumulates the reverse-mode gradients of one taped rollout into `grads`.
/// `grad_final` is dL/d(final state). Stochastic and alive masks are replayed
/// as recorded constants. If `grad_initial` is given it receives dL/d(input).
template <class T>
void backward_accumulate(const Tape<T>& tape, const NcaParams<T>& params,
                         const GoalEncoder<T>& enc, const CellGrid<T>& grad_final,
                         GradientSet<T>& grads, CellGrid<T>* grad_initial = nullptr) {
  if (tape.empty()) {
    if (grad_initial) *grad_initial = grad_final;
    return;
  }
  detail::check_tape(tape, params, enc);
  if (!grad_final.same_shape(tape.steps.back().input)) {
    throw dimension_error("loss gradient shape does not match the taped state");
  }
  CellGrid<T> g = grad_final;
  std::vector<T> g_pvec_before(grads.perturbation);
  std::fill(grads.perturbation.begin(), grads.perturbation.end(), T(0));
  for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
    detail::step_backward(*it, params, std::span<const T>(tape.perturbation), g, grads);
  }
  detail::encoder_backward(enc, tape.goal_id, tape.encoder,
                           std::span<const T>(grads.perturbation), grads.encoder);
  for (std::size_t i = 0; i < g_pvec_before.size(); ++i) grads.perturbation[i] += g_pvec_before[i];
  if (grad_initial) *grad_initial = std::move(g);
}

template <class T>
GradientSet<T> backward(const Tape<T>& tape, const NcaParams<T>& params,
                        const GoalEncoder<T>& enc, const CellGrid<T>& grad_final) {
  auto grads = GradientSet<T>::zeros_like(params, enc);
  backward_accumulate(tape, params, enc, grad_final, grads);
  return grads;
}

struct GradCheckOptions {
  double fire_rate = 1.0;
  double goal_rate = 1.0;
  int samples = 256;
  int goal_id = 0;
  // Negative control: flips the sign of the analytic gradient.
  bool negate_analytic = false;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
  int straddled = 0;
  std::string worst_parameter;
};

namespace detail {

/// Every discrete decision of a taped rollout: alive masks, rectifier signs,
/// clip saturation. Central differences are only meaningful when the pattern
/// is identical at theta - h, theta and theta + h.
template <class T>
std::vector<std::uint8_t> branch_pattern(const Tape<T>& tape) {
  std::vector<std::uint8_t> sig;
  for (T v : tape.encoder.z1) sig.push_back(v > T(0));
  for (T v : tape.encoder.z2) sig.push_back(v > T(0));
  const T bound = static_cast<T>(kStateBound);
  for (const auto& rec : tape.steps) {
    sig.insert(sig.end(), rec.pre_alive.bits.begin(), rec.pre_alive.bits.end());
    sig.insert(sig.end(), rec.post_alive.bits.begin(), rec.post_alive.bits.end());
    for (Eigen::Index i = 0; i < rec.z1.size(); ++i) sig.push_back(rec.z1.data()[i] > T(0));
    for (Eigen::Index i = 0; i < rec.z2.size(); ++i) sig.push_back(rec.z2.data()[i] > T(0));
    for (T v : rec.pre_clip.data) sig.push_back(v > -bound && v < bound);
  }
  return sig;
}

}  // namespace detail

/// Compares taped reverse-mode gradients of mse_rgba(rollout, random target)
/// with central differences, all in double precision. Both sides replay the
/// same random stream so stochastic masks coincide. Relative error per
/// parameter is |a - f| / max(|a|, |f|, 1e-6); zero when both vanish.
/// A sample whose +-h evaluations change any alive mask, rectifier sign or clip
/// state straddles a non-differentiable point; it is counted in
/// `straddled` and replaced by a fresh draw.
template <class T>
GradCheckResult check_gradients(const NcaParams<T>& params_in, const GoalEncoder<T>& enc_in,
                                const CellGrid<T>& grid_in, int n_steps, double h,
                                std::uint64_t seed, const GradCheckOptions& opt = {}) {
  if (n_steps < 0 || n_steps > 8) {
    throw config_error("gradient check supports 0..8 steps, got " + std::to_string(n_steps));
  }
  NcaParams<double> params = params_in.template cast<double>();
  GoalEncoder<double> enc = enc_in.template cast<double>();
  const CellGrid<double> grid = grid_in.template cast<double>();
  const StepConfig cfg{opt.fire_rate, opt.goal_rate};

  RngStream target_rng(seed, 0xfeed);
  CellGrid<double> target(kRgbaChannels, grid.height, grid.width);
  for (auto& v : target.data) v = target_rng.uniform();

  // Loss plus whether the branch pattern matches the unperturbed run.
  std::vector<std::uint8_t> base_pattern;
  auto loss_of = [&](const NcaParams<double>& p, const GoalEncoder<double>& e) {
    RngStream rng(seed, 1);
    Tape<double> t;
    const auto out = rollout(grid, p, e, opt.goal_id, n_steps, cfg, rng, &t);
    return std::pair{mse_rgba(out, target), detail::branch_pattern(t) == base_pattern};
  };

  Tape<double> tape;
  RngStream rng(seed, 1);
  const auto out = rollout(grid, params, enc, opt.goal_id, n_steps, cfg, rng, &tape);
  auto grads = GradientSet<double>::zeros_like(params, enc);
  if (n_steps > 0) backward_accumulate(tape, params, enc, mse_rgba_grad(out, target), grads);
  base_pattern = detail::branch_pattern(tape);

  // Flat index over (nca arrays, encoder arrays).
  struct Slot {
    bool encoder;
    std::size_t array;
    std::size_t index;
  };
  RngStream pick(seed, 2);
  const auto nca_arrays = params.arrays();
  const auto enc_arrays = enc.arrays();
  std::size_t total = 0;
  for (const auto& a : nca_arrays) total += a.values.size();
  for (const auto& a : enc_arrays) total += a.values.size();
  auto random_slot = [&]() {
    auto flat = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    for (std::size_t a = 0; a < nca_arrays.size(); ++a) {
      if (flat < nca_arrays[a].values.size()) return Slot{false, a, flat};
      flat -= nca_arrays[a].values.size();
    }
    for (std::size_t a = 0; a < enc_arrays.size(); ++a) {
      if (flat < enc_arrays[a].values.size()) return Slot{true, a, flat};
      flat -= enc_arrays[a].values.size();
    }
    return Slot{false, 0, 0};
  };
  // A few entries from every array first, so small arrays are always covered.
  std::vector<Slot> slots;
  auto cover = [&](bool is_enc, std::size_t a, std::size_t size) {
    for (std::size_t i = 0; i < std::min<std::size_t>(size, 8); ++i) {
      slots.push_back({is_enc, a, static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(size) - 1))});
    }
  };
  for (std::size_t a = 0; a < nca_arrays.size(); ++a) cover(false, a, nca_arrays[a].values.size());
  for (std::size_t a = 0; a < enc_arrays.size(); ++a) cover(true, a, enc_arrays[a].values.size());

  GradCheckResult result;
  auto grad_nca = grads.nca.arrays();
  auto grad_enc = grads.encoder.arrays();
  const int max_attempts = 20 * std::max(opt.samples, 1);
  std::size_t next = 0;
  for (int attempt = 0; result.checked < opt.samples && attempt < max_attempts; ++attempt) {
    const Slot s = next < slots.size() ? slots[next++] : random_slot();
    auto pa = s.encoder ? enc.arrays()[s.array] : params.arrays()[s.array];
    double& theta = pa.values[s.index];
    const double saved = theta;
    theta = saved + h;
    const auto [lp, smooth_p] = loss_of(params, enc);
    theta = saved - h;
    const auto [lm, smooth_m] = loss_of(params, enc);
    theta = saved;
    if (!smooth_p || !smooth_m) {
      ++result.straddled;
      continue;
    }
    const double fd = (lp - lm) / (2.0 * h);
    double analytic = s.encoder ? grad_enc[s.array].values[s.index] : grad_nca[s.array].values[s.index];
    if (opt.negate_analytic) analytic = -analytic;
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
    const double rel = (analytic == 0.0 && fd == 0.0) ? 0.0 : std::abs(analytic - fd) / denom;
    ++result.checked;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_parameter = std::string(pa.name) + "[" + std::to_string(s.index) + "]";
    }
  }
  return result;
}

}  // namespace goalnca
