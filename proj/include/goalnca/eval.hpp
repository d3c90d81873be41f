#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <type_traits>
#include <vector>

#include "goalnca/error.hpp"
#include "goalnca/grid.hpp"
#include "goalnca/image_io.hpp"
#include "goalnca/loss.hpp"
#include "goalnca/model.hpp"
#include "goalnca/params.hpp"
#include "goalnca/rng.hpp"
#include "goalnca/tasks.hpp"

namespace goalnca {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Alpha-weighted mean position of cells with alpha > 0.1, or nothing if
/// there are none.
template <class T>
std::optional<Point2> try_center_of_mass(const CellGrid<T>& grid) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  const T thr = static_cast<T>(kAliveThreshold);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      const T a = grid.at(kAlphaChannel, y, x);
      if (a > thr) {
        sw += a;
        sx += a * static_cast<double>(x);
        sy += a * static_cast<double>(y);
      }
    }
  }
  if (sw <= 0.0) return std::nullopt;
  return Point2{sx / sw, sy / sw};
}

template <class T>
Point2 center_of_mass(const CellGrid<T>& grid) {
  auto p = try_center_of_mass(grid);
  if (!p) throw error("center of mass undefined: no cell has alpha > 0.1");
  return *p;
}

/// |A and B| / |A or B| of the alpha > threshold masks; 1 when both are empty.
template <class T, class U>
double alpha_iou(const CellGrid<T>& a, const CellGrid<U>& b, double threshold = kAliveThreshold) {
  if (a.height != b.height || a.width != b.width || a.channels < kRgbaChannels ||
      b.channels < kRgbaChannels) {
    throw dimension_error("alpha_iou needs two RGBA fields of equal size");
  }
  long inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      const bool pa = a.at(kAlphaChannel, y, x) > threshold;
      const bool pb = b.at(kAlphaChannel, y, x) > threshold;
      inter += pa && pb;
      uni += pa || pb;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Channels 0-3 clamped to [0, 1] and quantized as floor(255 v + 0.5).
template <class T>
Rgba8 render_frame(const CellGrid<T>& grid) {
  Rgba8 img;
  img.width = grid.width;
  img.height = grid.height;
  img.pixels.resize(static_cast<std::size_t>(grid.cells()) * 4);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      for (int c = 0; c < kRgbaChannels; ++c) {
        const double v = std::clamp(static_cast<double>(grid.at(c, y, x)), 0.0, 1.0);
        img.pixels[(static_cast<std::size_t>(y) * grid.width + x) * 4 + c] =
            static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Goal-embedding PCA

struct SymmetricEigen {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // column k pairs with values[k]
};

/// Cyclic Jacobi rotations on a small symmetric matrix. Converges
/// quadratically; sweeps stop when the off-diagonal mass is negligible.
inline SymmetricEigen jacobi_eigen(Eigen::MatrixXd a, int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw dimension_error("jacobi_eigen needs a square matrix");
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(a.norm(), std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (std::sqrt(off) <= 1e-15 * scale) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    Eigen::VectorXd col = v.col(order[k]);
    // Deterministic sign: largest-magnitude component positive.
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col[arg] < 0) col = -col;
    out.vectors.col(k) = col;
  }
  return out;
}

struct Embedding2D {
  std::vector<Point2> coords;          // one per goal, mean-centered
  std::array<double, 2> explained{};   // variance ratio of each axis
  Eigen::MatrixXd components;          // n_hidden x 2 projection basis
  Eigen::RowVectorXd mean;
};

/// Rows are goal encodings (n_goals x n_hidden).
template <class T>
Eigen::MatrixXd goal_encodings(const GoalEncoder<T>& enc) {
  Eigen::MatrixXd x(enc.n_goals, enc.n_hidden);
  for (int g = 0; g < enc.n_goals; ++g) {
    const auto v = encode_goal(enc, g);
    for (int j = 0; j < enc.n_hidden; ++j) x(g, j) = static_cast<double>(v[j]);
  }
  return x;
}

/// PCA of arbitrary row vectors via the covariance eigendecomposition.
inline Embedding2D pca_2d(const Eigen::MatrixXd& data) {
  if (data.rows() < 2) throw dimension_error("PCA needs at least two points");
  Embedding2D e;
  e.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - e.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  const auto eig = jacobi_eigen(cov);
  const Eigen::Index k = std::min<Eigen::Index>(2, eig.values.size());
  e.components = Eigen::MatrixXd::Zero(data.cols(), 2);
  e.components.leftCols(k) = eig.vectors.leftCols(k);
  const double total = std::max(0.0, eig.values.sum());
  for (Eigen::Index i = 0; i < k; ++i) {
    e.explained[i] = total > 0 ? std::clamp(eig.values[i] / total, 0.0, 1.0) : 0.0;
  }
  const Eigen::MatrixXd proj = centered * e.components;
  for (Eigen::Index r = 0; r < proj.rows(); ++r) e.coords.push_back({proj(r, 0), proj(r, 1)});
  return e;
}

/// Frobenius norm of what the 2-D projection leaves out of `data`.
inline double reconstruction_error(const Eigen::MatrixXd& data, const Embedding2D& e) {
  Eigen::MatrixXd coords(static_cast<Eigen::Index>(e.coords.size()), 2);
  for (std::size_t i = 0; i < e.coords.size(); ++i) {
    coords(static_cast<Eigen::Index>(i), 0) = e.coords[i].x;
    coords(static_cast<Eigen::Index>(i), 1) = e.coords[i].y;
  }
  const Eigen::MatrixXd centered = data.rowwise() - e.mean;
  return (centered - coords * e.components.transpose()).norm();
}

template <class T>
Embedding2D goal_pca(const GoalEncoder<T>& enc) {
  if (enc.n_goals < 2) throw dimension_error("goal_pca needs at least two goals");
  return pca_2d(goal_encodings(enc));
}

// ---------------------------------------------------------------------------
// Rollout protocols

struct Phase {
  int goal = 0;
  int steps = 0;
};

/// Grows a seed at the center of a `grid_size` grid through `phases`.
/// `on_step(step_index, grid)` is called after every step when provided.
template <class T, class Fn = std::nullptr_t>
CellGrid<T> run_phases(const NcaParams<T>& params, const GoalEncoder<T>& enc, CellGrid<T> grid,
                       const std::vector<Phase>& phases, const StepConfig& cfg, RngStream& rng,
                       Fn&& on_step = nullptr) {
  int step = 0;
  for (const auto& ph : phases) {
    if constexpr (std::is_same_v<std::decay_t<Fn>, std::nullptr_t>) {
      grid = rollout(std::move(grid), params, enc, ph.goal, ph.steps, cfg, rng);
      step += ph.steps;
    } else {
      for (int s = 0; s < ph.steps; ++s) {
        grid = rollout(std::move(grid), params, enc, ph.goal, 1, cfg, rng);
        on_step(++step, grid);
      }
    }
  }
  return grid;
}

struct MetricsRow {
  double fire_rate = 1.0;
  double goal_rate = 1.0;
  Direction direction = Direction::stay;
  int steps = 0;
  double mse = 0.0;          // vs target moved by the commanded displacement
  double iou = 0.0;          // vs target aligned to the creature's center of mass
  double iou_initial = 0.0;  // vs the grown state, aligned by the displacement
  double dx = 0.0;           // center-of-mass displacement from the grown state
  double dy = 0.0;
  bool alive = true;
};

struct SweepConfig {
  int grid_size = 64;
  int grow_steps = 96;
  int move_steps = 128;
  int settle_steps = 96;
  double goal_rate = 1.0;
  std::uint64_t seed = 2022;
};

namespace detail {

inline PixelOffset rounded(double dx, double dy) {
  return {static_cast<int>(std::lround(dx)), static_cast<int>(std::lround(dy))};
}

template <class T>
CellGrid<T> shift_clamped(const CellGrid<T>& img, PixelOffset o) {
  o.dx = std::clamp(o.dx, -(img.width - 1), img.width - 1);
  o.dy = std::clamp(o.dy, -(img.height - 1), img.height - 1);
  return shift_image(img, o);
}

}  // namespace detail

/// Robustness protocol: for each rate, grow `grow_steps` under "stay", then
/// for each direction run `move_steps` in that direction followed by
/// `settle_steps` of "stay" from the grown state. `target` is the creature's
/// training image; it is centered on the evaluation grid.
template <class T>
std::vector<MetricsRow> fire_rate_sweep(const NcaParams<T>& params, const GoalEncoder<T>& enc,
                                        const RgbaImage& target, const std::vector<double>& rates,
                                        const std::vector<Direction>& directions,
                                        const SweepConfig& sc = {}) {
  if (enc.n_goals != kDirectionCount) {
    throw goal_error("fire_rate_sweep needs a locomotion encoder with 5 goals, got " +
                     std::to_string(enc.n_goals));
  }
  const RgbaImage canvas_target = center_on_canvas(target, sc.grid_size, sc.grid_size);
  const auto target_com = try_center_of_mass(canvas_target);
  std::vector<MetricsRow> rows;
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    const StepConfig cfg{rates[ri], sc.goal_rate};
    cfg.validate();
    RngStream grow_rng(sc.seed, 0x6e0 + ri);
    auto grown = rollout(new_seed<T>(sc.grid_size, sc.grid_size, enc.n_hidden), params, enc,
                         static_cast<int>(Direction::stay), sc.grow_steps, cfg, grow_rng);
    const auto grown_com = try_center_of_mass(grown);
    for (std::size_t di = 0; di < directions.size(); ++di) {
      const Direction d = directions[di];
      RngStream rng(sc.seed, 0x1000 + ri * 64 + di);
      auto g = rollout(grown, params, enc, static_cast<int>(d), sc.move_steps, cfg, rng);
      g = rollout(std::move(g), params, enc, static_cast<int>(Direction::stay), sc.settle_steps, cfg, rng);

      MetricsRow row;
      row.fire_rate = cfg.fire_rate;
      row.goal_rate = cfg.goal_rate;
      row.direction = d;
      row.steps = sc.move_steps + sc.settle_steps;
      const PixelOffset commanded = direction_to_delta(d, sc.move_steps);
      row.mse = mse_rgba(g, detail::shift_clamped(canvas_target, commanded));
      const auto com = try_center_of_mass(g);
      row.alive = com.has_value() && grown_com.has_value();
      if (row.alive) {
        row.dx = com->x - grown_com->x;
        row.dy = com->y - grown_com->y;
        if (target_com) {
          row.iou = alpha_iou(g, detail::shift_clamped(canvas_target, detail::rounded(
                                                           com->x - target_com->x, com->y - target_com->y)));
        }
        row.iou_initial = alpha_iou(g, detail::shift_clamped(grown, detail::rounded(row.dx, row.dy)));
      } else {
        row.dx = row.dy = std::numeric_limits<double>::quiet_NaN();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "fire_rate,goal_rate,direction,steps,mse,iou,iou_initial,dx,dy,alive\n";
  for (const auto& r : rows) {
    os << r.fire_rate << ',' << r.goal_rate << ',' << to_string(r.direction) << ',' << r.steps << ','
       << r.mse << ',' << r.iou << ',' << r.iou_initial << ',' << r.dx << ',' << r.dy << ','
       << (r.alive ? 1 : 0) << '\n';
  }
}

}  // namespace goalnca
