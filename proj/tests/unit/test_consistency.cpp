#include <gtest/gtest.h>

#include "dreammatcher/consistency.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dm;

namespace {

FlowField constant_flow(std::size_t h, std::size_t w, double dx, double dy) {
  FlowField f(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      f.dx(y, x) = dx;
      f.dy(y, x) = dy;
    }
  return f;
}

}  // namespace

TEST(ForegroundMask, BinaryMapIsFixedPoint) {
  testkit::Gen gen(51);
  const MaskGrid m = gen.binary_mask(5, 5, 0.4);
  const std::vector<TensorGrid> maps{m.grid()};
  EXPECT_EQ(foreground_mask(maps, {}, {5, 5}).grid(), m.grid());
}

TEST(ForegroundMask, ConstantMapsGiveEmptyMask) {
  const std::vector<TensorGrid> maps{TensorGrid(4, 4, 1, 0.3), TensorGrid(4, 4, 1, 0.3)};
  EXPECT_EQ(foreground_mask(maps, {}, {4, 4}).sum(), 0.0);
}

TEST(ForegroundMask, QuadrantExample) {
  TensorGrid map(4, 4, 1, 0.2);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 2; x < 4; ++x) map(y, x, 0) = 0.9;
  const std::vector<TensorGrid> maps{map};
  const MaskGrid m = foreground_mask(maps, {}, {4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(m(y, x), (y < 2 && x >= 2) ? 1.0 : 0.0);
}

TEST(ForegroundMask, AveragesAndResizes) {
  TensorGrid a(2, 2, 1, {1, 0, 0, 0});
  TensorGrid b(4, 4, 1, 0.0);
  b(3, 3, 0) = 1.0;
  const std::vector<TensorGrid> maps{a, b};
  const MaskGrid m = foreground_mask(maps, {}, {4, 4});
  // a upsampled: 1, 2/3 beside the corner, 4/9 diagonal. After averaging
  // and normalizing by the max 0.5: 1, 2/3, 4/9.
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m(0, 1), 1.0);
  EXPECT_EQ(m(1, 0), 1.0);
  EXPECT_EQ(m(1, 1), 0.0);
  EXPECT_EQ(m(3, 3), 1.0);
  EXPECT_EQ(m.sum(), 4.0);
  const std::vector<TensorGrid> none;
  EXPECT_THROW(foreground_mask(none, {}, {4, 4}), Error);
}

TEST(CycleConfidence, ZeroFlowsAreConfident) {
  testkit::Gen gen(52);
  const MaskGrid m = gen.binary_mask(5, 6, 0.5);
  ASSERT_GT(m.sum(), 0.0);
  const MaskGrid u = cycle_confidence(FlowField(5, 6), FlowField(5, 6), m, {});
  EXPECT_EQ(u.sum(), 30.0);
}

TEST(CycleConfidence, InverseShiftsInterior) {
  const MaskGrid m(6, 6, 1.0);
  const MaskGrid u = cycle_confidence(constant_flow(6, 6, 2, 0), constant_flow(6, 6, -2, 0), m, {});
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x + 2 < 6; ++x) EXPECT_EQ(u(y, x), 1.0);
}

TEST(CycleConfidence, ThresholdExample) {
  // 4x4 grid, |M| = 8, lambda_c = 0.4: threshold 4 * 0.5 * 0.4 = 0.8.
  MaskGrid m(4, 4, 0.0);
  for (std::size_t x = 0; x < 4; ++x) {
    m.set(0, x, 1.0);
    m.set(1, x, 1.0);
  }
  EXPECT_DOUBLE_EQ(cycle_threshold(m, 0.4), 0.8);
  FlowField fxy(4, 4), fyx(4, 4);
  fyx.dx(0, 0) = 1.0;  // pixel (0,0): error 1.0
  fyx.dx(0, 1) = 0.5;  // pixel (0,1): error 0.5
  const MaskGrid u = cycle_confidence(fxy, fyx, m, {0.4, 0.5});
  EXPECT_EQ(u(0, 0), 0.0);
  EXPECT_EQ(u(0, 1), 1.0);
}

TEST(CycleConfidence, EmptyForegroundRejectsAll) {
  EXPECT_EQ(cycle_confidence(FlowField(3, 3), FlowField(3, 3), MaskGrid(3, 3, 0.0), {}).sum(), 0.0);
}

TEST(CycleConfidence, MatchesOracleAndIsMonotone) {
  testkit::Gen gen(53);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = gen.index(1, 8), w = gen.index(1, 8);
    const FlowField fxy = gen.integer_flow(h, w), fyx = gen.integer_flow(h, w);
    const MaskGrid m = gen.binary_mask(h, w, gen.uniform(0.2, 0.9));
    MaskGrid prev(h, w, 0.0);
    for (double lc : {0.0, 0.2, 0.4, 0.8, 1.6}) {
      const MaskGrid u = cycle_confidence(fxy, fyx, m, {lc, 0.5});
      EXPECT_EQ(u.grid(), oracle::cycle_confidence(fxy, fyx, m, lc).grid());
      for (std::size_t p = 0; p < u.pixels(); ++p) EXPECT_GE(u[p], prev[p]);
      prev = u;
    }
  }
}

TEST(CycleConfidence, ShapeMismatch) {
  EXPECT_THROW(cycle_confidence(FlowField(3, 3), FlowField(3, 4), MaskGrid(3, 3), {}), Error);
  EXPECT_THROW(cycle_confidence(FlowField(3, 3), FlowField(3, 3), MaskGrid(2, 3), {}), Error);
  EXPECT_THROW((ConsistencyParams{-1.0, 0.5}.validate()), Error);
  EXPECT_THROW((ConsistencyParams{0.4, 1.5}.validate()), Error);
}

TEST(SemanticMask, Examples) {
  testkit::Gen gen(54);
  const MaskGrid m = gen.binary_mask(4, 4, 0.5);
  EXPECT_EQ(semantic_consistent_mask(m, MaskGrid(4, 4, 1.0)).grid(), m.grid());
  EXPECT_EQ(semantic_consistent_mask(MaskGrid(4, 4, 0.0), m).sum(), 0.0);
  MaskGrid checker(4, 4), inverse(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      checker.set(y, x, (x + y) % 2 == 0 ? 1.0 : 0.0);
      inverse.set(y, x, (x + y) % 2 == 0 ? 0.0 : 1.0);
    }
  EXPECT_EQ(semantic_consistent_mask(checker, inverse).sum(), 0.0);
}

TEST(SemanticMask, BoundedByInputs) {
  testkit::Gen gen(55);
  for (int trial = 0; trial < 30; ++trial) {
    const MaskGrid m = gen.binary_mask(5, 5, 0.5), u = gen.binary_mask(5, 5, 0.5);
    const MaskGrid mp = semantic_consistent_mask(m, u);
    for (std::size_t p = 0; p < 25; ++p) {
      EXPECT_LE(mp[p], m[p]);
      EXPECT_LE(mp[p], u[p]);
    }
    EXPECT_LE(mp.sum(), std::min(m.sum(), u.sum()));
  }
}
