#pragma once

// Denoiser abstraction. A backend evaluates eps_theta(z, t, cond) and, on
// request, exports decoder features, per-layer self-attention tensors and
// subject cross-attention maps. Self-attention outputs are produced through
// an AttentionProcessor so callers can swap in appearance matching.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "dreammatcher/attention.hpp"
#include "dreammatcher/matching.hpp"
#include "dreammatcher/tensors.hpp"

namespace dm {

using ConditionHandle = std::uint32_t;

struct ExtractionSpec {
  std::vector<int> feature_layers;
  std::vector<int> attention_layers;
  bool cross_attention = false;
  bool attention_weights = false;  // diagnostic: keep the softmax weights
};

struct AttentionCapture {
  TensorGrid q;
  TensorGrid k;
  TensorGrid v;
  TensorGrid output;
  std::size_t num_heads = 1;
  std::optional<AttentionWeights> weights;
};

struct DenoiseResponse {
  TensorGrid eps;
  std::map<int, TensorGrid> decoder_features;
  std::map<int, AttentionCapture> attention;
  std::vector<TensorGrid> cross_attn_maps;
};

class AttentionProcessor {
 public:
  virtual ~AttentionProcessor() = default;

  /// Output of self-attention layer `layer`. Queries and keys are read-only.
  virtual TensorGrid process(int layer, const TensorGrid& q, const TensorGrid& k, const TensorGrid& v,
                             std::size_t num_heads, AttentionWeights* weights_out) = 0;
};

/// Plain self-attention.
class DefaultAttentionProcessor final : public AttentionProcessor {
 public:
  TensorGrid process(int /*layer*/, const TensorGrid& q, const TensorGrid& k, const TensorGrid& v,
                     std::size_t num_heads, AttentionWeights* weights_out) override {
    if (weights_out == nullptr) return self_attention(q, k, v, num_heads);
    *weights_out = attention_weights(q, k, num_heads);
    return apply_attention(*weights_out, v);
  }
};

struct LayerInfo {
  int index = 0;
  GridSize size;
  std::size_t feature_channels = 0;
  std::size_t attention_dim = 0;
  std::size_t num_heads = 1;
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual DenoiseResponse denoise(const TensorGrid& z, std::size_t t, ConditionHandle cond,
                                  const ExtractionSpec& needs, AttentionProcessor* processor = nullptr) = 0;

  /// Condition used for the unconditional classifier-free guidance branch.
  virtual ConditionHandle null_condition() const = 0;
  virtual GridSize latent_size() const = 0;
  virtual std::size_t latent_channels() const = 0;
  virtual std::vector<LayerInfo> decoder_layers() const = 0;
};

}  // namespace dm
