#include <gtest/gtest.h>

#include <algorithm>

#include "dreammatcher/tensors.hpp"
#include "dreammatcher/warp.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dm;

TEST(Tensors, RejectsZeroExtent) {
  EXPECT_THROW(TensorGrid(0, 2, 1), Error);
  EXPECT_THROW(TensorGrid(2, 2, 1, std::vector<double>(3)), Error);
}

TEST(Tensors, MaskRejectsOutOfRange) {
  EXPECT_THROW(MaskGrid(2, 2, 1.5), Error);
  MaskGrid m(2, 2, 0.0);
  EXPECT_THROW(m.set(0, 0, -0.1), Error);
}

TEST(Resize, ConstantStaysConstant) {
  TensorGrid g(4, 4, 1, 7.0);
  const TensorGrid out = resize_bilinear(g, 8, 8);
  for (double v : out.data()) EXPECT_EQ(v, 7.0);
}

TEST(Resize, SameSizeIsBitIdentical) {
  testkit::Gen gen(1);
  const TensorGrid g = gen.grid(5, 3, 2);
  EXPECT_EQ(resize_bilinear(g, 5, 3), g);
}

TEST(Resize, TwoByTwoCenter) {
  const TensorGrid g(2, 2, 1, {0, 1, 2, 3});
  const TensorGrid out = resize_bilinear(g, 3, 3);
  EXPECT_DOUBLE_EQ(out(1, 1, 0), 1.5);
  EXPECT_EQ(out(0, 0, 0), 0.0);
  EXPECT_EQ(out(2, 2, 0), 3.0);
  EXPECT_EQ(out(0, 2, 0), 1.0);
}

TEST(Resize, NonFiniteRejected) {
  TensorGrid g(2, 2, 1, 0.0);
  g(0, 1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(resize_bilinear(g, 3, 3), Error);
}

TEST(Resize, StaysWithinInputBounds) {
  testkit::Gen gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    const TensorGrid g = gen.grid(gen.index(1, 6), gen.index(1, 6), 1);
    const auto [lo, hi] = std::minmax_element(g.data().begin(), g.data().end());
    const TensorGrid out = resize_bilinear(g, gen.index(1, 11), gen.index(1, 11));
    for (double v : out.data()) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(HadamardBlend, SaturatedMasks) {
  testkit::Gen gen(3);
  const TensorGrid a = gen.grid(3, 4, 2);
  const TensorGrid b = gen.grid(3, 4, 2);
  EXPECT_EQ(hadamard_blend(a, b, MaskGrid(3, 4, 1.0)), a);
  EXPECT_EQ(hadamard_blend(a, b, MaskGrid(3, 4, 0.0)), b);
}

TEST(HadamardBlend, QuarterMask) {
  const TensorGrid out = hadamard_blend(TensorGrid(2, 2, 3, 2.0), TensorGrid(2, 2, 3, 4.0), MaskGrid(2, 2, 0.25));
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 3.5);
}

TEST(HadamardBlend, ConvexPerElement) {
  testkit::Gen gen(4);
  for (int trial = 0; trial < 30; ++trial) {
    const TensorGrid a = gen.grid(3, 3, 2);
    const TensorGrid b = gen.grid(3, 3, 2);
    MaskGrid m(3, 3);
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) m.set(y, x, gen.uniform());
    const TensorGrid out = hadamard_blend(a, b, m);
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_GE(out.data()[i], std::min(a.data()[i], b.data()[i]));
      EXPECT_LE(out.data()[i], std::max(a.data()[i], b.data()[i]));
    }
  }
}

TEST(HadamardBlend, ShapeMismatch) {
  EXPECT_THROW(hadamard_blend(TensorGrid(2, 2, 1), TensorGrid(2, 2, 2), MaskGrid(2, 2)), Error);
  EXPECT_THROW(hadamard_blend(TensorGrid(2, 2, 1), TensorGrid(2, 2, 1), MaskGrid(2, 3)), Error);
}

TEST(MinMax, Examples) {
  const TensorGrid out = minmax_normalize(TensorGrid(1, 3, 1, {1, 3, 5}));
  EXPECT_EQ(out.values(), (std::vector<double>{0, 0.5, 1}));
  const TensorGrid flat = minmax_normalize(TensorGrid(2, 2, 1, 4.2));
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);
  const TensorGrid unit(1, 4, 1, {0, 0.25, 1, 0.5});
  EXPECT_EQ(minmax_normalize(unit), unit);
}

TEST(Warp, Examples) {
  const TensorGrid g(1, 3, 1, {1, 2, 3});
  FlowField f(1, 3);
  for (std::size_t x = 0; x < 3; ++x) f.dx(0, x) = 1.0;
  EXPECT_EQ(warp(g, f).values(), (std::vector<double>{2, 3, 3}));
  EXPECT_EQ(warp(g, FlowField(1, 3)), g);

  testkit::Gen gen(5);
  const TensorGrid wide = gen.grid(3, 5, 2);
  FlowField far(3, 5);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 5; ++x) far.dx(y, x) = 5.0;
  const TensorGrid clamped = warp(wide, far);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(clamped(y, x, c), wide(y, 4, c));
}

TEST(Warp, MatchesOracleOnRealFlows) {
  testkit::Gen gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = gen.index(1, 8), w = gen.index(1, 8);
    const TensorGrid g = gen.grid(h, w, gen.index(1, 4));
    const FlowField f = gen.real_flow(h, w, 4.0);
    EXPECT_LE(oracle::max_abs_diff(warp(g, f), oracle::warp(g, f)), 1e-12);
  }
}

TEST(Warp, LinearInGrid) {
  testkit::Gen gen(7);
  for (int trial = 0; trial < 30; ++trial) {
    const TensorGrid a = gen.grid(5, 6, 3);
    const TensorGrid b = gen.grid(5, 6, 3);
    const FlowField f = gen.real_flow(5, 6, 3.0);
    const double alpha = gen.normal(), beta = gen.normal();
    TensorGrid combo(5, 6, 3);
    for (std::size_t i = 0; i < combo.size(); ++i) combo.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
    const TensorGrid wa = warp(a, f), wb = warp(b, f), wc = warp(combo, f);
    for (std::size_t i = 0; i < wc.size(); ++i) {
      EXPECT_NEAR(wc.data()[i], alpha * wa.data()[i] + beta * wb.data()[i], 1e-6);
    }
  }
}

TEST(ResizeFlow, ConstantShiftScales) {
  FlowField f(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      f.dx(y, x) = 1.0;
      f.dy(y, x) = -0.5;
    }
  const FlowField up = resize_flow(f, 8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      EXPECT_EQ(up.dx(y, x), 2.0);
      EXPECT_EQ(up.dy(y, x), -1.0);
    }
}

TEST(ResizeMask, StaysBinary) {
  testkit::Gen gen(8);
  const MaskGrid m = gen.binary_mask(4, 4, 0.5);
  EXPECT_TRUE(resize_mask(m, 8, 8).is_binary());
  EXPECT_TRUE(resize_mask(m, 2, 2).is_binary());
  EXPECT_EQ(resize_mask(m, 4, 4).grid(), m.grid());
}

TEST(Concat, StacksChannels) {
  const std::vector<TensorGrid> parts{TensorGrid(1, 2, 1, {1, 2}), TensorGrid(1, 2, 2, {3, 4, 5, 6})};
  EXPECT_EQ(concat_channels(parts).values(), (std::vector<double>{1, 3, 4, 2, 5, 6}));
}
