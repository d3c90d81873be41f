#include <gtest/gtest.h>

#include <algorithm>

#include "goalnca/grid.hpp"
#include "goalnca/rng.hpp"

using namespace goalnca;

namespace {

// Brute-force liveness: scan every in-bounds neighbor.
bool alive_oracle(const CellGrid<double>& g, int y, int x) {
  double m = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int yy = y + dy, xx = x + dx;
      if (yy < 0 || yy >= g.height || xx < 0 || xx >= g.width) continue;
      m = std::max(m, g.at(kAlphaChannel, yy, xx));
    }
  }
  return m >= kAliveThreshold;
}

}  // namespace

TEST(Seed, NineByNineSixteenHidden) {
  const auto g = new_seed<float>(9, 9, 16);
  int nonzero = 0;
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < 9; ++y) {
      for (int x = 0; x < 9; ++x) {
        if (g.at(c, y, x) != 0.0f) {
          ++nonzero;
          EXPECT_EQ(y, 4);
          EXPECT_EQ(x, 4);
          EXPECT_GE(c, 3);
          EXPECT_EQ(g.at(c, y, x), 1.0f);
        }
      }
    }
  }
  EXPECT_EQ(nonzero, 17);  // alpha plus 16 hidden
}

TEST(Seed, SmallestLegal) {
  const auto g = new_seed<float>(3, 3, 1);
  ASSERT_EQ(g.channels, 5);
  const float expected[5] = {0, 0, 0, 1, 1};
  for (int c = 0; c < 5; ++c) EXPECT_EQ(g.at(c, 1, 1), expected[c]);
}

TEST(Seed, ChannelSum) {
  const auto g = new_seed<double>(64, 64, 32);
  double s = 0;
  for (double v : g.data) s += v;
  EXPECT_EQ(s, 33.0);
}

TEST(Seed, RejectsBadDimensions) {
  EXPECT_THROW(new_seed<float>(2, 9, 4), dimension_error);
  EXPECT_THROW(new_seed<float>(9, 9, 0), dimension_error);
}

TEST(AliveMask, SingleCellLightsThreeByThree) {
  CellGrid<float> g(5, 5, 5);
  g.at(kAlphaChannel, 2, 2) = 1.0f;
  const auto m = alive_mask(g);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      EXPECT_EQ(m(y, x), std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1) << y << "," << x;
    }
  }
  EXPECT_EQ(m.count(), 9);
}

TEST(AliveMask, ThresholdIsInclusive) {
  CellGrid<double> g(4, 5, 5);
  g.at(kAlphaChannel, 2, 2) = 0.1;
  EXPECT_EQ(alive_mask(g).count(), 9);
  g.at(kAlphaChannel, 2, 2) = 0.0999999;
  EXPECT_EQ(alive_mask(g).count(), 0);
}

TEST(AliveMask, AllBinaryPatternsMatchOracle) {
  // Every 0/1 alpha pattern on a 3x3 grid; check all nine cells.
  for (int bits = 0; bits < 512; ++bits) {
    CellGrid<double> g(4, 3, 3);
    for (int i = 0; i < 9; ++i) g.at(kAlphaChannel, i / 3, i % 3) = (bits >> i) & 1;
    const auto m = alive_mask(g);
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 3; ++x) ASSERT_EQ(m(y, x), alive_oracle(g, y, x)) << bits;
    }
  }
}

TEST(AliveMask, RandomFieldMatchesOracle) {
  RngStream rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    CellGrid<double> g(4, 8, 8);
    for (auto& v : g.channel(kAlphaChannel)) v = rng.uniform() < 0.8 ? rng.uniform() * 0.12 : rng.uniform();
    const auto m = alive_mask(g);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) ASSERT_EQ(m(y, x), alive_oracle(g, y, x));
    }
  }
}

TEST(AliveAndClip, ClipsAliveZeroesDead) {
  CellGrid<float> g(4, 1, 2);
  g.at(0, 0, 0) = 12.3f;
  g.at(0, 0, 1) = -3.2f;
  AliveMask m(1, 2);
  m.bits = {1, 0};
  const auto out = apply_alive_and_clip(g, m);
  EXPECT_EQ(out.at(0, 0, 0), 10.0f);
  EXPECT_EQ(out.at(0, 0, 1), 0.0f);
}

TEST(AliveAndClip, IdempotentOnClippedAliveGrid) {
  RngStream rng(5);
  CellGrid<float> g(6, 4, 4);
  for (auto& v : g.data) v = static_cast<float>(rng.uniform() * 20 - 10);
  AliveMask m(4, 4);
  std::fill(m.bits.begin(), m.bits.end(), 1);
  EXPECT_EQ(apply_alive_and_clip(g, m), g);
}

TEST(AliveAndClip, RejectsMismatchedMask) {
  CellGrid<float> g(4, 3, 3);
  AliveMask m(3, 4);
  EXPECT_THROW(apply_alive_and_clip(g, m), dimension_error);
}
