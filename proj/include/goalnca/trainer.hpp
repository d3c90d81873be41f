#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

#include "goalnca/autodiff.hpp"
#include "goalnca/error.hpp"
#include "goalnca/grid.hpp"
#include "goalnca/loss.hpp"
#include "goalnca/model.hpp"
#include "goalnca/params.hpp"
#include "goalnca/rng.hpp"
#include "goalnca/tasks.hpp"

namespace goalnca {

enum class Task { morphing, locomotion };

inline std::string_view to_string(Task t) {
  return t == Task::morphing ? "morphing" : "locomotion";
}

inline Task task_from_string(std::string_view s) {
  if (s == "morphing") return Task::morphing;
  if (s == "locomotion") return Task::locomotion;
  throw config_error("unknown task '" + std::string(s) + "' (expected morphing or locomotion)");
}

struct TrainConfig {
  Task task = Task::morphing;
  int batch_size = 8;
  int pool_size = 1024;
  int min_steps = 48;
  int max_steps = 96;
  int segments = 2;
  double fire_rate = 0.5;
  double goal_rate = 1.0;
  int n_seed_replacements = 2;
  int total_iterations = 100000;
  std::uint64_t seed = 0;
  int grid_size = 64;
  int n_hidden = 16;
  EncoderKind encoder = EncoderKind::mlp3;
  double encoder_init_scale = 0.1;
  double lr = 1e-3;
  // Step decay: lr * lr_decay_factor from iteration lr_decay_at on (0 = off).
  int lr_decay_at = 0;
  double lr_decay_factor = 0.1;
  int border_margin = 4;
  int threads = 1;

  int channels() const noexcept { return kRgbaChannels + n_hidden; }
  double lr_at(int iteration) const noexcept {
    return lr_decay_at > 0 && iteration >= lr_decay_at ? lr * lr_decay_factor : lr;
  }
  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    auto fail = [](const std::string& m) { throw config_error(m); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (pool_size < batch_size) fail("pool_size must be >= batch_size");
    if (min_steps < 0 || min_steps > max_steps) fail("need 0 <= min_steps <= max_steps");
    if (segments < 1) fail("segments must be >= 1");
    if (n_seed_replacements < 0 || n_seed_replacements > batch_size) {
      fail("n_seed_replacements must be in [0, batch_size]");
    }
    if (grid_size < 3) fail("grid_size must be >= 3");
    if (n_hidden < 1) fail("n_hidden must be >= 1");
    if (lr < 0) fail("lr must be non-negative");
    if (lr_decay_at < 0) fail("lr_decay_at must be non-negative");
    if (!(lr_decay_factor > 0)) fail("lr_decay_factor must be positive");
    if (threads < 1) fail("threads must be >= 1");
    if (total_iterations < 0) fail("total_iterations must be non-negative");
    StepConfig{fire_rate, goal_rate}.validate();
  }
};

/// Replay buffer of grown states. Locomotion entries also remember where
/// their current target sits relative to the centered base image.
struct SamplePool {
  std::vector<CellGrid<float>> states;
  std::vector<PixelOffset> offsets;

  int size() const noexcept { return static_cast<int>(states.size()); }
};

inline SamplePool make_pool(const TrainConfig& cfg) {
  SamplePool pool;
  const auto seed = new_seed<float>(cfg.grid_size, cfg.grid_size, cfg.n_hidden);
  pool.states.assign(cfg.pool_size, seed);
  pool.offsets.assign(cfg.pool_size, PixelOffset{});
  return pool;
}

/// Adam moments for one parameter set. `P` is NcaParams or GoalEncoder.
template <class P>
struct AdamState {
  P m;
  P v;
  long long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <class T>
AdamState<NcaParams<T>> make_adam(const NcaParams<T>& p, double lr) {
  AdamState<NcaParams<T>> s;
  s.m = NcaParams<T>::zeros(p.channels);
  s.v = NcaParams<T>::zeros(p.channels);
  s.lr = lr;
  return s;
}

template <class T>
AdamState<GoalEncoder<T>> make_adam(const GoalEncoder<T>& e, double lr) {
  AdamState<GoalEncoder<T>> s;
  s.m = GoalEncoder<T>::zeros(e.kind, e.n_goals, e.n_hidden);
  s.v = GoalEncoder<T>::zeros(e.kind, e.n_goals, e.n_hidden);
  s.lr = lr;
  return s;
}

/// Bias-corrected Adam update of every array in `params`.
template <class P>
void adam_step(P& params, const P& grads, AdamState<P>& st) {
  auto pa = params.arrays();
  const auto ga = grads.arrays();
  auto ma = st.m.arrays();
  auto va = st.v.arrays();
  if (pa.size() != ga.size() || pa.size() != ma.size() || pa.size() != va.size()) {
    throw dimension_error("optimizer: parameter and gradient array counts differ");
  }
  for (std::size_t a = 0; a < pa.size(); ++a) {
    if (pa[a].values.size() != ga[a].values.size() || pa[a].values.size() != ma[a].values.size() ||
        pa[a].values.size() != va[a].values.size()) {
      throw dimension_error("optimizer: shape mismatch in array " + std::string(pa[a].name) + " (" +
                            std::to_string(pa[a].values.size()) + " vs " +
                            std::to_string(ga[a].values.size()) + ")");
    }
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t a = 0; a < pa.size(); ++a) {
    auto p = pa[a].values;
    auto g = ga[a].values;
    auto m = ma[a].values;
    auto v = va[a].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      const double vi = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      m[i] = static_cast<std::remove_reference_t<decltype(m[i])>>(mi);
      v[i] = static_cast<std::remove_reference_t<decltype(v[i])>>(vi);
      const double step = st.lr * (mi / c1) / (std::sqrt(vi / c2) + st.eps);
      p[i] = static_cast<std::remove_reference_t<decltype(p[i])>>(p[i] - step);
    }
  }
}

/// Divides each gradient array by (its L2 norm + 1e-8), independently.
template <class T>
void normalize_gradients(GradientSet<T>& grads) {
  auto norm_all = [](auto arrays) {
    for (auto& a : arrays) {
      double s = 0.0;
      for (T v : a.values) s += static_cast<double>(v) * v;
      const double k = 1.0 / (std::sqrt(s) + 1e-8);
      for (T& v : a.values) v = static_cast<T>(v * k);
    }
  };
  norm_all(grads.nca.arrays());
  norm_all(grads.encoder.arrays());
}

struct Batch {
  std::vector<int> indices;
  std::vector<CellGrid<float>> states;
  std::vector<PixelOffset> offsets;
};

/// Uniform draw of batch_size distinct pool slots (partial Fisher-Yates).
/// The first n_seed_replacements entries are reset to fresh seeds.
inline Batch sample_batch(const SamplePool& pool, const TrainConfig& cfg, RngStream& rng) {
  if (cfg.batch_size > pool.size()) {
    throw config_error("batch_size " + std::to_string(cfg.batch_size) + " exceeds pool size " +
                       std::to_string(pool.size()));
  }
  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  Batch b;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto j = static_cast<int>(rng.uniform_int(i, pool.size() - 1));
    std::swap(order[i], order[j]);
    b.indices.push_back(order[i]);
  }
  const auto seed = new_seed<float>(cfg.grid_size, cfg.grid_size, cfg.n_hidden);
  for (int i = 0; i < cfg.batch_size; ++i) {
    const int slot = b.indices[i];
    if (i < cfg.n_seed_replacements) {
      b.states.push_back(seed);
      b.offsets.push_back({});
    } else {
      b.states.push_back(pool.states[slot]);
      b.offsets.push_back(pool.offsets.empty() ? PixelOffset{} : pool.offsets[slot]);
    }
  }
  return b;
}

/// Optimizer state and parameters that training mutates.
struct Learner {
  NcaParams<float> nca;
  GoalEncoder<float> encoder;
  AdamState<NcaParams<float>> nca_opt;
  AdamState<GoalEncoder<float>> enc_opt;
};

inline Learner make_learner(const TrainConfig& cfg, int n_goals) {
  RngStream rng(cfg.seed, 0x1417);
  Learner l;
  l.nca = init_nca_params<float>(cfg.channels(), rng);
  l.encoder = init_goal_encoder<float>(cfg.encoder, n_goals, cfg.n_hidden, rng, cfg.encoder_init_scale);
  l.nca_opt = make_adam(l.nca, cfg.lr);
  l.enc_opt = make_adam(l.encoder, cfg.lr);
  return l;
}

namespace detail {

struct SegmentResult {
  double loss = 0.0;
  bool finite = true;
};

/// Rolls every batch entry forward `steps` steps under its goal, backprops
/// the batch-mean RGBA loss and applies one normalized Adam step to both
/// parameter sets. Per-sample work may run on `threads` workers; gradients
/// are reduced in slot order so results do not depend on the thread count.
inline SegmentResult run_segment(Batch& batch, const std::vector<int>& goals,
                                 const std::vector<const RgbaImage*>& targets, int steps,
                                 const TrainConfig& cfg, Learner& learner,
                                 const std::vector<RngStream>& sample_rngs) {
  const int B = static_cast<int>(batch.states.size());
  const StepConfig step_cfg{cfg.fire_rate, cfg.goal_rate};
  std::vector<GradientSet<float>> grads(B);
  std::vector<double> losses(B, 0.0);

  auto work = [&](int b) {
    RngStream rng = sample_rngs[b];
    Tape<float> tape;
    auto out = rollout(batch.states[b], learner.nca, learner.encoder, goals[b], steps, step_cfg,
                       rng, &tape);
    losses[b] = mse_rgba(out, *targets[b]);
    grads[b] = GradientSet<float>::zeros_like(learner.nca, learner.encoder);
    backward_accumulate(tape, learner.nca, learner.encoder,
                        mse_rgba_grad(out, *targets[b], 1.0 / B), grads[b]);
    batch.states[b] = std::move(out);
  };
  const int threads = std::min(cfg.threads, B);
  if (threads <= 1) {
    for (int b = 0; b < B; ++b) work(b);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (int b = t; b < B; b += threads) work(b);
      });
    }
  }

  auto total = GradientSet<float>::zeros_like(learner.nca, learner.encoder);
  for (int b = 0; b < B; ++b) total += grads[b];
  normalize_gradients(total);
  adam_step(learner.nca, total.nca, learner.nca_opt);
  adam_step(learner.encoder, total.encoder, learner.enc_opt);

  SegmentResult r;
  for (double l : losses) {
    r.loss += l / B;
    r.finite = r.finite && std::isfinite(l);
  }
  return r;
}

inline std::vector<RngStream> sample_streams(const RngStream& base, int segment, int B) {
  std::vector<RngStream> s;
  for (int b = 0; b < B; ++b) s.push_back(base.split(1000 + static_cast<std::uint64_t>(segment) * 4096 + b));
  return s;
}

}  // namespace detail

/// Morphing iteration: every sampled state gets one uniformly drawn goal and
/// is grown through cfg.segments segments of uniform length in
/// [min_steps, max_steps]; an optimizer step follows each segment and the
/// pool is written back after the last one. Returns the segment losses.
inline std::vector<double> train_iteration_morphing(SamplePool& pool, Learner& learner,
                                                    const TrainConfig& cfg,
                                                    const std::vector<RgbaImage>& targets,
                                                    RngStream& rng) {
  if (cfg.task != Task::morphing) throw config_error("train_iteration_morphing needs task=morphing");
  if (targets.empty()) throw config_error("morphing needs at least one target");
  const RngStream base = rng.split(rng.next_u64());
  Batch batch = sample_batch(pool, cfg, rng);
  const int B = cfg.batch_size;
  std::vector<int> goals(B);
  std::vector<const RgbaImage*> tgt(B);
  for (int b = 0; b < B; ++b) {
    goals[b] = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(targets.size()) - 1));
    tgt[b] = &targets[goals[b]];
  }
  std::vector<double> losses;
  for (int s = 0; s < cfg.segments; ++s) {
    const int steps = static_cast<int>(rng.uniform_int(cfg.min_steps, cfg.max_steps));
    auto r = detail::run_segment(batch, goals, tgt, steps, cfg, learner,
                                 detail::sample_streams(base, s, B));
    losses.push_back(r.loss);
  }
  for (int b = 0; b < B; ++b) pool.states[batch.indices[b]] = std::move(batch.states[b]);
  return losses;
}

/// Locomotion iteration: cfg.segments segments; each draws one length for
/// the batch and one direction per entry. The entry's target is the base
/// image moved by its accumulated offset plus round(steps / 8) pixels in
/// that direction. Directions that would bring the target content within
/// cfg.border_margin pixels of an edge are redrawn.
inline std::vector<double> train_iteration_locomotion(SamplePool& pool, Learner& learner,
                                                      const TrainConfig& cfg,
                                                      const RgbaImage& base_target,
                                                      RngStream& rng) {
  if (cfg.task != Task::locomotion) {
    throw config_error("train_iteration_locomotion needs task=locomotion");
  }
  const RngStream base = rng.split(rng.next_u64());
  Batch batch = sample_batch(pool, cfg, rng);
  const int B = cfg.batch_size;
  const BoundingBox box = content_bounds(base_target);
  std::vector<double> losses;
  std::vector<int> goals(B);
  std::vector<RgbaImage> shifted(B);
  std::vector<const RgbaImage*> tgt(B);
  for (int s = 0; s < cfg.segments; ++s) {
    const int steps = static_cast<int>(rng.uniform_int(cfg.min_steps, cfg.max_steps));
    for (int b = 0; b < B; ++b) {
      Direction d = Direction::stay;
      for (int attempt = 0; attempt < 64; ++attempt) {
        const auto cand = static_cast<Direction>(rng.uniform_int(0, kDirectionCount - 1));
        if (offset_within_margin(box, batch.offsets[b] + direction_to_delta(cand, steps),
                                 base_target.width, base_target.height, cfg.border_margin)) {
          d = cand;
          break;
        }
      }
      batch.offsets[b] += direction_to_delta(d, steps);
      goals[b] = static_cast<int>(d);
      shifted[b] = shift_image(base_target, batch.offsets[b]);
      tgt[b] = &shifted[b];
    }
    auto r = detail::run_segment(batch, goals, tgt, steps, cfg, learner,
                                 detail::sample_streams(base, s, B));
    losses.push_back(r.loss);
  }
  for (int b = 0; b < B; ++b) {
    pool.states[batch.indices[b]] = std::move(batch.states[b]);
    pool.offsets[batch.indices[b]] = batch.offsets[b];
  }
  return losses;
}

/// Owns everything one training run mutates.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<RgbaImage> targets)
      : cfg_(std::move(cfg)), targets_(std::move(targets)) {
    cfg_.validate();
    if (targets_.empty()) throw config_error("training needs at least one target image");
    for (const auto& t : targets_) {
      if (t.height != cfg_.grid_size || t.width != cfg_.grid_size) {
        throw dimension_error("target is " + std::to_string(t.height) + "x" +
                              std::to_string(t.width) + " but grid_size is " +
                              std::to_string(cfg_.grid_size));
      }
    }
    const int n_goals = cfg_.task == Task::morphing ? static_cast<int>(targets_.size()) : kDirectionCount;
    learner_ = make_learner(cfg_, n_goals);
    pool_ = make_pool(cfg_);
    rng_ = RngStream(cfg_.seed, 0x7a11);
  }

  /// One iteration; returns the per-segment losses.
  std::vector<double> step() {
    RngStream it_rng = rng_.split(static_cast<std::uint64_t>(iteration_));
    if (cfg_.lr_decay_at > 0) learner_.nca_opt.lr = learner_.enc_opt.lr = cfg_.lr_at(iteration_);
    ++iteration_;
    if (cfg_.task == Task::morphing) {
      return train_iteration_morphing(pool_, learner_, cfg_, targets_, it_rng);
    }
    return train_iteration_locomotion(pool_, learner_, cfg_, targets_.front(), it_rng);
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  const Learner& learner() const noexcept { return learner_; }
  Learner& learner() noexcept { return learner_; }
  const SamplePool& pool() const noexcept { return pool_; }
  const std::vector<RgbaImage>& targets() const noexcept { return targets_; }
  int iteration() const noexcept { return iteration_; }

 private:
  TrainConfig cfg_;
  std::vector<RgbaImage> targets_;
  Learner learner_;
  SamplePool pool_;
  RngStream rng_;
  int iteration_ = 0;
};

}  // namespace goalnca
