#include <gtest/gtest.h>

#include "goalnca/autodiff.hpp"
#include "goalnca/loss.hpp"

using namespace goalnca;

namespace {

struct Fixture {
  NcaParams<float> nca;
  GoalEncoder<float> enc;
  CellGrid<float> grid;
};

Fixture make_fixture(std::uint64_t seed, bool zero_final_layer = false) {
  RngStream rng(seed);
  const int C = 8;
  Fixture f;
  f.nca = init_nca_params<float>(C, rng);
  if (!zero_final_layer) {
    for (auto& v : f.nca.w3) v = static_cast<float>((rng.uniform() * 2 - 1) * 0.1);
    for (auto& v : f.nca.b3) v = static_cast<float>((rng.uniform() * 2 - 1) * 0.05);
  }
  f.enc = init_goal_encoder<float>(EncoderKind::mlp3, 3, C - 4, rng, 1.0);
  f.grid = CellGrid<float>(C, 6, 6);
  for (auto& v : f.grid.data) v = static_cast<float>(rng.uniform() * 2 - 1);
  for (auto& a : f.grid.channel(kAlphaChannel)) a = static_cast<float>(0.3 + 0.5 * rng.uniform());
  return f;
}

}  // namespace

TEST(Backward, ZeroLossGradientGivesZeroGradients) {
  auto f = make_fixture(1);
  Tape<float> tape;
  RngStream rng(2);
  const auto out = rollout(f.grid, f.nca, f.enc, 1, 3, StepConfig{0.5, 0.5}, rng, &tape);
  const auto g = backward(tape, f.nca, f.enc, CellGrid<float>(out.channels, out.height, out.width));
  for (const auto& a : g.nca.arrays()) {
    for (float v : a.values) ASSERT_EQ(v, 0.0f) << a.name;
  }
  for (const auto& a : g.encoder.arrays()) {
    for (float v : a.values) ASSERT_EQ(v, 0.0f) << a.name;
  }
}

TEST(Backward, RejectsWrongGradientShape) {
  auto f = make_fixture(3);
  Tape<float> tape;
  RngStream rng(2);
  rollout(f.grid, f.nca, f.enc, 1, 2, StepConfig{}, rng, &tape);
  EXPECT_THROW(backward(tape, f.nca, f.enc, CellGrid<float>(8, 5, 6)), dimension_error);
}

TEST(GradCheck, UntrainedOneStep) {
  auto f = make_fixture(4, true);
  GradCheckOptions o;
  o.samples = 200;
  const auto r = check_gradients(f.nca, f.enc, f.grid, 1, 1e-3, 11, o);
  EXPECT_LT(r.max_relative_error, 1e-2) << r.worst_parameter;
  EXPECT_GE(r.checked, 200);
}

TEST(GradCheck, ThreeStepsWithFrozenStochasticMasks) {
  auto f = make_fixture(5);
  GradCheckOptions o;
  o.fire_rate = 0.5;
  o.goal_rate = 0.5;
  o.goal_id = 2;
  o.samples = 200;
  const auto r = check_gradients(f.nca, f.enc, f.grid, 3, 1e-3, 12, o);
  EXPECT_LT(r.max_relative_error, 1e-2) << r.worst_parameter;
  EXPECT_GE(r.checked, 200);
}

TEST(GradCheck, EmbeddingEncoder) {
  auto f = make_fixture(6);
  RngStream rng(7);
  f.enc = init_goal_encoder<float>(EncoderKind::embedding, 5, 4, rng, 0.5);
  GradCheckOptions o;
  o.goal_id = 4;
  o.samples = 100;
  const auto r = check_gradients(f.nca, f.enc, f.grid, 2, 1e-3, 13, o);
  EXPECT_LT(r.max_relative_error, 1e-2) << r.worst_parameter;
}

TEST(GradCheck, ZeroStepsIsExactlyZero) {
  auto f = make_fixture(8);
  const auto r = check_gradients(f.nca, f.enc, f.grid, 0, 1e-3, 14);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(GradCheck, DetectsSignFlip) {
  auto f = make_fixture(9);
  GradCheckOptions o;
  o.negate_analytic = true;
  o.samples = 50;
  const auto r = check_gradients(f.nca, f.enc, f.grid, 1, 1e-3, 15, o);
  EXPECT_GT(r.max_relative_error, 0.5);
}

TEST(GradCheck, RejectsLongRollouts) {
  auto f = make_fixture(10);
  EXPECT_THROW(check_gradients(f.nca, f.enc, f.grid, 9, 1e-3, 1), config_error);
}

TEST(Loss, Examples) {
  CellGrid<float> g(6, 3, 3);
  RgbaImage ones(4, 3, 3);
  std::fill(ones.data.begin(), ones.data.end(), 1.0f);
  EXPECT_DOUBLE_EQ(mse_rgba(g, ones), 1.0);
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 9; ++i) g.channel(c)[i] = 1.0f;
  }
  g.channel(5)[0] = 3.0f;  // hidden channels are ignored
  EXPECT_EQ(mse_rgba(g, ones), 0.0);
}

TEST(Loss, MatchesNestedLoopOracle) {
  RngStream rng(16);
  CellGrid<float> g(7, 5, 6);
  RgbaImage t(4, 5, 6);
  for (auto& v : g.data) v = static_cast<float>(rng.uniform() * 4 - 2);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  double s = 0;
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 6; ++x) {
        const double d = static_cast<double>(g.at(c, y, x)) - t.at(c, y, x);
        s += d * d;
      }
    }
  }
  EXPECT_NEAR(mse_rgba(g, t), s / (4 * 5 * 6), 1e-6);
  EXPECT_THROW(mse_rgba(g, RgbaImage(4, 5, 5)), dimension_error);
}
