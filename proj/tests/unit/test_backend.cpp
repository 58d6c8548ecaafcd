#include <gtest/gtest.h>

#include "dreammatcher/engine.hpp"
#include "dreammatcher/synthetic_backend.hpp"
#include "support/generators.hpp"

using namespace dm;

namespace {

ExtractionSpec everything() {
  ExtractionSpec needs;
  needs.feature_layers = {1, 2, 3};
  needs.attention_layers = {1, 2, 3};
  needs.cross_attention = true;
  needs.attention_weights = true;
  return needs;
}

}  // namespace

TEST(Synthetic, Deterministic) {
  SyntheticBackend a, b;
  const ConditionHandle ca = a.add_condition(SubjectPlacement{2, 3});
  const ConditionHandle cb = b.add_condition(SubjectPlacement{2, 3});
  testkit::Gen gen(81);
  const TensorGrid z = gen.grid(16, 16, 4);
  const DenoiseResponse ra = a.denoise(z, 17, ca, everything());
  const DenoiseResponse ra2 = a.denoise(z, 17, ca, everything());
  const DenoiseResponse rb = b.denoise(z, 17, cb, everything());
  EXPECT_EQ(ra.eps, ra2.eps);
  EXPECT_EQ(ra.eps, rb.eps);
  for (int l : {1, 2, 3}) {
    EXPECT_EQ(ra.decoder_features.at(l), rb.decoder_features.at(l));
    EXPECT_EQ(ra.attention.at(l).output, rb.attention.at(l).output);
    EXPECT_EQ(*ra.attention.at(l).weights, *rb.attention.at(l).weights);
  }
}

TEST(Synthetic, ZeroLatentGivesBias) {
  SyntheticBackend backend;
  const ConditionHandle c = backend.add_condition(SubjectPlacement{0, 0});
  for (std::size_t t : {0u, 1u, 25u, 50u}) {
    EXPECT_EQ(backend.denoise(TensorGrid(16, 16, 4, 0.0), t, c, everything()).eps, backend.bias(t, c));
  }
}

TEST(Synthetic, DefaultLayout) {
  SyntheticBackend backend;
  const auto layers = backend.decoder_layers();
  ASSERT_EQ(layers.size(), 3u);
  EXPECT_EQ(layers[1].feature_channels + layers[2].feature_channels, 1920u);
  const ConditionHandle c = backend.add_condition(SubjectPlacement{1, 1});
  const DenoiseResponse r = backend.denoise(TensorGrid(16, 16, 4, 0.1), 10, c, everything());
  EXPECT_EQ(r.decoder_features.at(1).height(), 4u);
  EXPECT_EQ(r.decoder_features.at(2).height(), 8u);
  EXPECT_EQ(r.decoder_features.at(3).height(), 16u);
  EXPECT_EQ(r.decoder_features.at(3).channels(), 640u);
  ASSERT_EQ(r.cross_attn_maps.size(), 1u);
  EXPECT_EQ(r.cross_attn_maps[0](1, 1, 0), 1.0);
}

TEST(Synthetic, Errors) {
  SyntheticBackend backend;
  EXPECT_THROW(backend.denoise(TensorGrid(16, 16, 4), 1, 42, {}), Error);
  EXPECT_THROW(backend.denoise(TensorGrid(8, 8, 4), 1, 0, {}), Error);
  ExtractionSpec missing;
  missing.feature_layers = {9};
  EXPECT_THROW(backend.denoise(TensorGrid(16, 16, 4), 1, 0, missing), Error);
  EXPECT_THROW(backend.add_condition(SubjectPlacement{12, 0}), Error);
  SyntheticBackendSpec bad;
  bad.mix_norm = 1.0;
  EXPECT_THROW(SyntheticBackend{bad}, Error);
}

TEST(Synthetic, ShiftedSubjectFlowIsRecovered) {
  SyntheticBackend backend;
  const SubjectPlacement ref_at{2, 2}, tgt_at{6, 8};
  const ConditionHandle ref = backend.add_condition(ref_at);
  const ConditionHandle tgt = backend.add_condition(tgt_at);
  testkit::Gen gen(82);
  const TensorGrid z = gen.grid(16, 16, 4);
  ExtractionSpec needs;
  needs.feature_layers = {2, 3};
  needs.cross_attention = true;
  const DenoiseResponse rr = backend.denoise(z, 30, ref, needs);
  const DenoiseResponse rt = backend.denoise(z, 30, tgt, needs);
  const std::vector<TensorGrid> fr{rr.decoder_features.at(2), rr.decoder_features.at(3)};
  const std::vector<TensorGrid> ft{rt.decoder_features.at(2), rt.decoder_features.at(3)};
  const StepMatch m = compute_step_match(fr, ft, rt.cross_attn_maps, {64, {}, {}});
  const MaskGrid subject = backend.subject_mask(tgt);
  std::size_t hits = 0;
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      if (subject(y, x) == 0.0) continue;
      hits += m.flow_xy.dx(y, x) == -6.0 && m.flow_xy.dy(y, x) == -4.0;
    }
  EXPECT_GE(static_cast<double>(hits), 0.9 * subject.sum());
  EXPECT_EQ(m.m.grid(), subject.grid());
}

TEST(Synthetic, ProcessorOverridesAttentionOutput) {
  struct Zeroing final : AttentionProcessor {
    TensorGrid process(int, const TensorGrid& q, const TensorGrid&, const TensorGrid& v, std::size_t,
                       AttentionWeights*) override {
      return TensorGrid(q.height(), q.width(), v.channels(), 0.0);
    }
  } zeroing;
  SyntheticBackend backend;
  const ConditionHandle c = backend.add_condition(std::nullopt);
  testkit::Gen gen(83);
  const TensorGrid z = gen.grid(16, 16, 4);
  const DenoiseResponse plain = backend.denoise(z, 5, c, {});
  const DenoiseResponse zeroed = backend.denoise(z, 5, c, {}, &zeroing);
  EXPECT_NE(plain.eps, zeroed.eps);
}
