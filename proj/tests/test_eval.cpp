#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <sstream>

#include "goalnca/eval.hpp"

using namespace goalnca;

namespace {

double dist(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST(CenterOfMass, SingleCell) {
  CellGrid<float> g(5, 32, 32);
  g.at(kAlphaChannel, 20, 10) = 1.0f;
  const auto p = center_of_mass(g);
  EXPECT_DOUBLE_EQ(p.x, 10.0);
  EXPECT_DOUBLE_EQ(p.y, 20.0);
}

TEST(CenterOfMass, Symmetric) {
  CellGrid<float> g(4, 3, 3);
  g.at(kAlphaChannel, 0, 0) = 0.7f;
  g.at(kAlphaChannel, 0, 2) = 0.7f;
  const auto p = center_of_mass(g);
  EXPECT_DOUBLE_EQ(p.x, 1.0);
  EXPECT_DOUBLE_EQ(p.y, 0.0);
}

TEST(CenterOfMass, MatchesWeightedMeanOracle) {
  RngStream rng(1);
  CellGrid<float> g(4, 9, 11);
  for (auto& a : g.channel(kAlphaChannel)) a = static_cast<float>(rng.uniform());
  double sw = 0, sx = 0, sy = 0;
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 11; ++x) {
      const double a = g.at(kAlphaChannel, y, x);
      if (a <= 0.1) continue;
      sw += a;
      sx += a * x;
      sy += a * y;
    }
  }
  const auto p = center_of_mass(g);
  EXPECT_NEAR(p.x, sx / sw, 1e-6);
  EXPECT_NEAR(p.y, sy / sw, 1e-6);
}

TEST(CenterOfMass, DeadGridHasNone) {
  CellGrid<float> g(4, 5, 5);
  EXPECT_FALSE(try_center_of_mass(g).has_value());
  EXPECT_THROW(center_of_mass(g), error);
}

TEST(Iou, Examples) {
  CellGrid<float> a(4, 1, 3), b(4, 1, 3);
  a.at(3, 0, 0) = a.at(3, 0, 1) = 1.0f;
  EXPECT_DOUBLE_EQ(alpha_iou(a, a), 1.0);
  b.at(3, 0, 1) = b.at(3, 0, 2) = 1.0f;
  EXPECT_DOUBLE_EQ(alpha_iou(a, b), 1.0 / 3.0);
  CellGrid<float> c(4, 1, 3);
  c.at(3, 0, 2) = 1.0f;
  EXPECT_DOUBLE_EQ(alpha_iou(a, c), 0.0);
  EXPECT_THROW(alpha_iou(a, CellGrid<float>(4, 2, 3)), dimension_error);
}

TEST(Render, Quantization) {
  CellGrid<float> g(5, 1, 3);
  const auto blank = render_frame(g);
  for (auto b : blank.pixels) EXPECT_EQ(b, 0);
  for (int c = 0; c < 4; ++c) {
    g.at(c, 0, 0) = 1.0f;
    g.at(c, 0, 1) = 0.5f;
    g.at(c, 0, 2) = 3.0f;
  }
  const auto img = render_frame(g);
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.height, 1);
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(img.pixels[c], 255);
    EXPECT_EQ(img.pixels[4 + c], 128);
    EXPECT_EQ(img.pixels[8 + c], 255);
  }
}

TEST(Pca, JacobiMatchesSelfAdjointSolver) {
  RngStream rng(2);
  Eigen::MatrixXd a(6, 6);
  for (int i = 0; i < 36; ++i) a.data()[i] = rng.uniform() - 0.5;
  const Eigen::MatrixXd s = a * a.transpose();
  const auto mine = jacobi_eigen(s);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(s);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(mine.values[i], ref.eigenvalues()[5 - i], 1e-9);
  EXPECT_NEAR((s * mine.vectors - mine.vectors * mine.values.asDiagonal()).norm(), 0.0, 1e-9);
}

TEST(Pca, TwoGoalsEquidistantThroughOrigin) {
  RngStream rng(3);
  const auto e = init_goal_encoder<double>(EncoderKind::embedding, 2, 6, rng, 1.0);
  const auto emb = goal_pca(e);
  ASSERT_EQ(emb.coords.size(), 2u);
  EXPECT_NEAR(emb.coords[0].x, -emb.coords[1].x, 1e-12);
  EXPECT_NEAR(emb.coords[0].y, -emb.coords[1].y, 1e-12);
  EXPECT_NEAR(emb.coords[0].y, 0.0, 1e-12);
}

TEST(Pca, AxisAlignedInputsKeepDistances) {
  Eigen::MatrixXd x(4, 2);
  x << 0, 0, 3, 0, 0, 1, 2, 2;
  const auto emb = pca_2d(x);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(dist(emb.coords[i], emb.coords[j]), (x.row(i) - x.row(j)).norm(), 1e-9);
    }
  }
}

TEST(Pca, RankTwoErrorMatchesSvdOracle) {
  RngStream rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto e = init_goal_encoder<double>(EncoderKind::embedding, 5, 8, rng, 1.0);
    const Eigen::MatrixXd x = goal_encodings(e);
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    const auto sv = svd.singularValues();
    const double oracle = std::sqrt(sv.tail(sv.size() - 2).squaredNorm());
    const auto emb = goal_pca(e);
    EXPECT_NEAR(reconstruction_error(x, emb), oracle, 1e-6);
    EXPECT_GE(emb.explained[0], emb.explained[1]);
  }
}

TEST(Sweep, ZeroFireRateDoesNotMove) {
  RngStream rng(5);
  auto p = init_nca_params<float>(8, rng);
  for (auto& v : p.w3) v = static_cast<float>(rng.uniform() - 0.5);
  const auto e = init_goal_encoder<float>(EncoderKind::embedding, 5, 4, rng);
  RgbaImage target(4, 16, 16);
  target.at(3, 8, 8) = 1.0f;
  SweepConfig sc;
  sc.grid_size = 16;
  sc.grow_steps = 4;
  sc.move_steps = 8;
  sc.settle_steps = 4;
  const auto rows = fire_rate_sweep(p, e, target, {0.0}, {Direction::right, Direction::up}, sc);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.alive);
    EXPECT_EQ(r.dx, 0.0);
    EXPECT_EQ(r.dy, 0.0);
    EXPECT_EQ(r.iou_initial, 1.0);
  }
  std::ostringstream os;
  write_metrics_csv(os, rows);
  const auto text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(text.rfind("fire_rate,goal_rate,direction", 0), 0u);
}

TEST(Sweep, RequiresLocomotionEncoder) {
  RngStream rng(6);
  const auto p = init_nca_params<float>(8, rng);
  const auto e = init_goal_encoder<float>(EncoderKind::embedding, 3, 4, rng);
  EXPECT_THROW(fire_rate_sweep(p, e, RgbaImage(4, 8, 8), {1.0}, {Direction::right}), goal_error);
}
