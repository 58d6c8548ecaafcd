#include <gtest/gtest.h>

#include <cmath>

#include "dreammatcher/guidance.hpp"
#include "support/generators.hpp"

using namespace dm;

namespace {

// alpha_bar(0) = 1, alpha_bar(1) = 0.25, alpha_bar(2) = 0.2
NoiseSchedule small_schedule() { return NoiseSchedule({1.0, 0.25, 0.2}); }

}  // namespace

TEST(PredictZ0, Examples) {
  const NoiseSchedule s = small_schedule();
  testkit::Gen gen(61);
  const TensorGrid z = gen.grid(2, 2, 2), eps = gen.grid(2, 2, 2);
  EXPECT_EQ(predict_z0(z, eps, 0, s), z);
  const TensorGrid scaled = predict_z0(z, TensorGrid(2, 2, 2, 0.0), 1, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_DOUBLE_EQ(scaled.data()[i], z.data()[i] / 0.5);
  const TensorGrid one = predict_z0(TensorGrid(1, 1, 1, 1.0), TensorGrid(1, 1, 1, 0.5), 1, s);
  EXPECT_NEAR(one(0, 0, 0), (1 - std::sqrt(0.75) * 0.5) / 0.5, 1e-15);
  EXPECT_NEAR(one(0, 0, 0), 1.134, 1e-3);
  EXPECT_THROW(predict_z0(z, eps, 3, s), Error);
}

TEST(AlignReference, Examples) {
  testkit::Gen gen(62);
  const TensorGrid z0 = gen.grid(4, 4, 3);
  EXPECT_EQ(align_reference_z0(z0, FlowField(4, 4)), z0);

  FlowField shift(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) shift.dx(y, x) = 1.0;
  const TensorGrid shifted = align_reference_z0(z0, shift);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(shifted(y, x, c), z0(y, std::min<std::size_t>(x + 1, 3), c));

  const TensorGrid big = gen.grid(8, 8, 2);
  FlowField half(4, 4), full(8, 8);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      half.dx(y, x) = 1.0;
      half.dy(y, x) = -1.0;
    }
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      full.dx(y, x) = 2.0;
      full.dy(y, x) = -2.0;
    }
  EXPECT_EQ(align_reference_z0(big, half), align_reference_z0(big, full));
  EXPECT_THROW(align_reference_z0(big, FlowField(4, 2)), Error);
}

TEST(GuidanceEnergy, Examples) {
  const TensorGrid a(1, 3, 2, {3, 4, 0, 0, 9, 9});
  const TensorGrid b(1, 3, 2, 0.0);
  MaskGrid m(1, 3, 0.0);
  m.set(0, 0, 1.0);
  m.set(0, 1, 1.0);
  EXPECT_DOUBLE_EQ(guidance_energy(a, b, m), 2.5);
  EXPECT_EQ(guidance_energy(a, a, m), 0.0);
  EXPECT_EQ(guidance_energy(a, b, MaskGrid(1, 3, 0.0)), 0.0);
  EXPECT_THROW(guidance_energy(a, b, MaskGrid(1, 2, 0.0)), Error);
}

TEST(GuidanceGradient, Examples) {
  const NoiseSchedule s = small_schedule();
  const TensorGrid a(1, 2, 2, {3, 4, 7, 7});
  const TensorGrid b(1, 2, 2, 0.0);
  MaskGrid m(1, 2, 0.0);
  m.set(0, 0, 1.0);
  const TensorGrid g = guidance_gradient(a, b, m, 0, s);
  EXPECT_DOUBLE_EQ(g(0, 0, 0), -0.6);
  EXPECT_DOUBLE_EQ(g(0, 0, 1), -0.8);
  EXPECT_EQ(g(0, 1, 0), 0.0);
  EXPECT_EQ(g(0, 1, 1), 0.0);
  const TensorGrid same = guidance_gradient(a, a, m, 1, s);
  for (double v : same.data()) EXPECT_EQ(v, 0.0);
  const TensorGrid off = guidance_gradient(a, b, MaskGrid(1, 2, 0.0), 1, s);
  for (double v : off.data()) EXPECT_EQ(v, 0.0);
  // Chain factor 1/sqrt(alpha_bar) = 2 at t = 1.
  EXPECT_DOUBLE_EQ(guidance_gradient(a, b, m, 1, s)(0, 0, 0), -1.2);
}

TEST(GuidanceGradient, SupportInsideMaskAndDescent) {
  testkit::Gen gen(63);
  const NoiseSchedule s = small_schedule();
  for (int trial = 0; trial < 20; ++trial) {
    const TensorGrid a = gen.grid(4, 4, 3), b = gen.grid(4, 4, 3);
    const MaskGrid m = gen.binary_mask(4, 4, 0.5);
    const TensorGrid g = guidance_gradient(a, b, m, 0, s);
    for (std::size_t p = 0; p < 16; ++p) {
      if (m[p] == 0.0)
        for (double v : g.pixel(p)) EXPECT_EQ(v, 0.0);
    }
    const double before = guidance_energy(a, b, m);
    if (before == 0.0) continue;
    TensorGrid stepped = b;
    for (std::size_t i = 0; i < b.size(); ++i) stepped.data()[i] -= 1e-3 * g.data()[i];
    EXPECT_LT(guidance_energy(a, stepped, m), before);
    EXPECT_GE(before, 0.0);
  }
}

TEST(ApplyGuidance, Examples) {
  // sqrt(1 - alpha_bar) = 0.8 at alpha_bar = 0.36.
  const NoiseSchedule s({1.0, 0.36});
  const TensorGrid eps(2, 2, 1, 1.0), grad(2, 2, 1, 0.1);
  const TensorGrid out = apply_guidance(eps, grad, {50.0}, 1, s);
  for (double v : out.data()) EXPECT_NEAR(v, 1.0 - 4.0, 1e-12);
  EXPECT_EQ(apply_guidance(eps, grad, {0.0}, 1, s), eps);
  EXPECT_EQ(apply_guidance(eps, TensorGrid(2, 2, 1, 0.0), {50.0}, 1, s), eps);
  EXPECT_THROW(apply_guidance(eps, grad, {-1.0}, 1, s), Error);
}
