#pragma once

// Deterministic test double for eps_theta.
//
//   eps(z, t, c) = A z + b(t, c) + gain * sum_l up(SA_l(z) W_o)
//
// A is a per-pixel channel mix with spectral norm `mix_norm`; the
// self-attention values are linear in z without bias, so eps(0) = b(t, c).
// Decoder features are a latent-resolution code field, block-averaged to the
// layer resolution, plus a small projection of z. Inside a condition's
// subject patch the code depends only on the position relative to the patch
// origin, so two conditions that place the subject at different origins
// have a known correspondence (the origin difference).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dreammatcher/backend.hpp"

namespace dm {

struct SyntheticLayerSpec {
  int index = 1;
  std::size_t divisor = 1;  // layer resolution = latent / divisor
  std::size_t feature_channels = 64;
  std::size_t attention_dim = 8;
  std::size_t num_heads = 2;
};

struct SyntheticBackendSpec {
  std::uint64_t seed = 2024;
  std::size_t latent_height = 16;
  std::size_t latent_width = 16;
  std::size_t latent_channels = 4;
  // Decoder layers l = 1..3; 1280 + 640 channels for the descriptor layers 2, 3.
  std::vector<SyntheticLayerSpec> layers = {
      {1, 4, 1280, 16, 2},
      {2, 2, 1280, 16, 2},
      {3, 1, 640, 8, 2},
  };
  std::size_t subject_size = 6;
  double mix_norm = 0.3;
  double bias_scale = 0.1;
  double attention_gain = 0.1;
  double feature_noise = 0.05;
  double background_attention = 0.05;
};

struct SubjectPlacement {
  std::size_t origin_y = 0;
  std::size_t origin_x = 0;
};

class SyntheticBackend final : public Denoiser {
 public:
  explicit SyntheticBackend(SyntheticBackendSpec spec = {}) : spec_(std::move(spec)) {
    require(spec_.latent_height >= 1 && spec_.latent_width >= 1 && spec_.latent_channels >= 1, ErrorKind::config,
            "synthetic backend: latent dims must be >= 1");
    require(spec_.mix_norm >= 0.0 && spec_.mix_norm < 1.0, ErrorKind::config,
            "synthetic backend: mix_norm must lie in [0, 1)");
    require(spec_.subject_size >= 1 && spec_.subject_size <= std::min(spec_.latent_height, spec_.latent_width),
            ErrorKind::config, "synthetic backend: subject_size must fit the latent");
    std::mt19937_64 rng(spec_.seed);
    const auto cz = static_cast<Eigen::Index>(spec_.latent_channels);

    mix_ = gaussian(rng, cz, cz);
    const double top = Eigen::JacobiSVD<Eigen::MatrixXd>(mix_).singularValues()(0);
    if (top > 0) mix_ *= spec_.mix_norm / top;
    time_bias_ = random_grid(rng, spec_.latent_height, spec_.latent_width, spec_.latent_channels);

    for (const auto& ls : spec_.layers) {
      require(ls.divisor >= 1 && spec_.latent_height % ls.divisor == 0 && spec_.latent_width % ls.divisor == 0,
              ErrorKind::config, "synthetic backend: layer divisor must divide the latent size");
      require(ls.attention_dim % ls.num_heads == 0, ErrorKind::config,
              "synthetic backend: attention_dim must be divisible by num_heads");
      Layer layer;
      layer.spec = ls;
      layer.size = {spec_.latent_height / ls.divisor, spec_.latent_width / ls.divisor};
      const auto d = static_cast<Eigen::Index>(ls.attention_dim);
      const double in_scale = 1.0 / std::sqrt(static_cast<double>(cz));
      layer.wq = gaussian(rng, cz, d) * in_scale;
      layer.wk = gaussian(rng, cz, d) * in_scale;
      layer.wv = gaussian(rng, cz, d) * in_scale;
      layer.wo = gaussian(rng, d, cz) / std::sqrt(static_cast<double>(d));
      layer.position = gaussian(rng, static_cast<Eigen::Index>(layer.size.pixels()), d) * 0.5;
      layer.projection = gaussian(rng, static_cast<Eigen::Index>(ls.feature_channels), cz);
      layer.subject_code =
          gaussian(rng, static_cast<Eigen::Index>(spec_.subject_size * spec_.subject_size),
                   static_cast<Eigen::Index>(ls.feature_channels));
      layers_.push_back(std::move(layer));
    }
    null_ = add_condition(std::nullopt);
  }

  /// Registers a condition; with a placement, the subject patch sits at that
  /// origin (latent pixels).
  ConditionHandle add_condition(std::optional<SubjectPlacement> subject) {
    if (subject) {
      require(subject->origin_y + spec_.subject_size <= spec_.latent_height &&
                  subject->origin_x + spec_.subject_size <= spec_.latent_width,
              ErrorKind::config, "synthetic backend: subject patch leaves the latent");
    }
    const auto handle = static_cast<ConditionHandle>(conditions_.size());
    std::mt19937_64 rng(spec_.seed ^ (0x9E3779B97F4A7C15ULL * (handle + 1)));
    Condition cond;
    cond.subject = subject;
    cond.bias = random_grid(rng, spec_.latent_height, spec_.latent_width, spec_.latent_channels);
    for (const auto& layer : layers_) {
      cond.background_code.push_back(gaussian(rng, static_cast<Eigen::Index>(latent_pixels()),
                                              static_cast<Eigen::Index>(layer.spec.feature_channels)));
    }
    conditions_.push_back(std::move(cond));
    return handle;
  }

  ConditionHandle null_condition() const override { return null_; }
  GridSize latent_size() const override { return {spec_.latent_height, spec_.latent_width}; }
  std::size_t latent_channels() const override { return spec_.latent_channels; }
  std::vector<LayerInfo> decoder_layers() const override {
    std::vector<LayerInfo> out;
    for (const auto& l : layers_) {
      out.push_back({l.spec.index, l.size, l.spec.feature_channels, l.spec.attention_dim, l.spec.num_heads});
    }
    return out;
  }
  const SyntheticBackendSpec& spec() const noexcept { return spec_; }

  /// Subject footprint of a condition at latent resolution (1 inside).
  MaskGrid subject_mask(ConditionHandle cond) const {
    const Condition& c = condition(cond);
    MaskGrid mask(spec_.latent_height, spec_.latent_width, 0.0);
    if (!c.subject) return mask;
    for (std::size_t y = 0; y < spec_.subject_size; ++y) {
      for (std::size_t x = 0; x < spec_.subject_size; ++x) mask.set(c.subject->origin_y + y, c.subject->origin_x + x, 1.0);
    }
    return mask;
  }

  /// b(t, cond): the noise prediction at z = 0.
  TensorGrid bias(std::size_t t, ConditionHandle cond) const {
    const Condition& c = condition(cond);
    const double time = 0.01 * static_cast<double>(t);
    TensorGrid b(spec_.latent_height, spec_.latent_width, spec_.latent_channels);
    for (std::size_t i = 0; i < b.size(); ++i) {
      b.data()[i] = spec_.bias_scale * (c.bias.data()[i] + time * time_bias_.data()[i]);
    }
    return b;
  }

  DenoiseResponse denoise(const TensorGrid& z, std::size_t t, ConditionHandle cond, const ExtractionSpec& needs,
                          AttentionProcessor* processor = nullptr) override {
    require(z.height() == spec_.latent_height && z.width() == spec_.latent_width &&
                z.channels() == spec_.latent_channels,
            ErrorKind::backend, "synthetic backend: latent shape " + z.shape_string() + " not supported");
    require_finite(z, "synthetic backend");
    const Condition& c = condition(cond);
    DefaultAttentionProcessor plain;
    if (processor == nullptr) processor = &plain;

    DenoiseResponse r;
    r.eps = TensorGrid(z.height(), z.width(), z.channels());
    const auto zm = detail::tokens(z);
    Eigen::Map<RowMatrix> em(r.eps.data().data(), zm.rows(), zm.cols());
    em.noalias() = zm * mix_.transpose();
    const TensorGrid b = bias(t, cond);
    for (std::size_t i = 0; i < r.eps.size(); ++i) r.eps.data()[i] += b.data()[i];

    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const Layer& layer = layers_[li];
      const int idx = layer.spec.index;
      const TensorGrid z_l = block_mean(z, layer.spec.divisor);
      const auto zl = detail::tokens(z_l);
      TensorGrid q = from_matrix(zl * layer.wq + layer.position, layer.size);
      TensorGrid k = from_matrix(zl * layer.wk + layer.position, layer.size);
      TensorGrid v = from_matrix(zl * layer.wv, layer.size);

      const bool capture = contains(needs.attention_layers, idx);
      AttentionWeights weights;
      TensorGrid out = processor->process(idx, q, k, v, layer.spec.num_heads,
                                          capture && needs.attention_weights ? &weights : nullptr);
      require(out.height() == layer.size.height && out.width() == layer.size.width &&
                  out.channels() == layer.spec.attention_dim,
              ErrorKind::backend, "synthetic backend: attention processor returned wrong shape");
      require_finite(out, "synthetic backend attention output");

      const TensorGrid mixed = from_matrix(detail::tokens(out) * layer.wo, layer.size);
      const TensorGrid up = resize_bilinear(mixed, spec_.latent_height, spec_.latent_width);
      for (std::size_t i = 0; i < r.eps.size(); ++i) r.eps.data()[i] += spec_.attention_gain * up.data()[i];

      if (capture) {
        AttentionCapture cap{std::move(q), std::move(k), std::move(v), std::move(out), layer.spec.num_heads, {}};
        if (needs.attention_weights) cap.weights = std::move(weights);
        r.attention.emplace(idx, std::move(cap));
      }
      if (contains(needs.feature_layers, idx)) r.decoder_features.emplace(idx, features(layer, li, c, z_l));
    }
    for (int l : needs.feature_layers) {
      require(r.decoder_features.count(l) == 1, ErrorKind::backend,
              "synthetic backend: no decoder layer " + std::to_string(l));
    }
    for (int l : needs.attention_layers) {
      require(r.attention.count(l) == 1, ErrorKind::backend,
              "synthetic backend: no attention layer " + std::to_string(l));
    }
    if (needs.cross_attention) r.cross_attn_maps.push_back(cross_attention(c));
    return r;
  }

 private:
  struct Layer {
    SyntheticLayerSpec spec;
    GridSize size;
    Eigen::MatrixXd wq, wk, wv, wo;
    Eigen::MatrixXd position;      // tokens x attention_dim
    Eigen::MatrixXd projection;    // feature_channels x latent_channels
    Eigen::MatrixXd subject_code;  // (subject_size^2) x feature_channels
  };

  struct Condition {
    std::optional<SubjectPlacement> subject;
    TensorGrid bias;
    std::vector<Eigen::MatrixXd> background_code;  // per layer: latent pixels x feature_channels
  };

  static Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    }
    return m;
  }

  static TensorGrid random_grid(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t c) {
    std::normal_distribution<double> normal(0.0, 1.0);
    TensorGrid g(h, w, c);
    for (auto& v : g.data()) v = normal(rng);
    return g;
  }

  static TensorGrid from_matrix(const Eigen::MatrixXd& m, GridSize size) {
    TensorGrid g(size.height, size.width, static_cast<std::size_t>(m.cols()));
    Eigen::Map<RowMatrix>(g.data().data(), m.rows(), m.cols()) = m;
    return g;
  }

  static bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

  static TensorGrid block_mean(const TensorGrid& g, std::size_t div) {
    if (div == 1) return g;
    TensorGrid out(g.height() / div, g.width() / div, g.channels(), 0.0);
    const double inv = 1.0 / static_cast<double>(div * div);
    for (std::size_t y = 0; y < g.height(); ++y) {
      for (std::size_t x = 0; x < g.width(); ++x) {
        auto dst = out.pixel(y / div, x / div);
        auto src = g.pixel(y, x);
        for (std::size_t c = 0; c < g.channels(); ++c) dst[c] += src[c] * inv;
      }
    }
    return out;
  }

  const Condition& condition(ConditionHandle cond) const {
    require(cond < conditions_.size(), ErrorKind::backend,
            "synthetic backend: unknown condition handle " + std::to_string(cond));
    return conditions_[cond];
  }

  std::size_t latent_pixels() const { return spec_.latent_height * spec_.latent_width; }

  TensorGrid features(const Layer& layer, std::size_t li, const Condition& c, const TensorGrid& z_l) const {
    const auto dims = static_cast<Eigen::Index>(layer.spec.feature_channels);
    const std::size_t div = layer.spec.divisor;
    const double inv = 1.0 / static_cast<double>(div * div);
    TensorGrid out(layer.size.height, layer.size.width, layer.spec.feature_channels, 0.0);
    Eigen::Map<RowMatrix> om(out.data().data(), static_cast<Eigen::Index>(layer.size.pixels()), dims);
    for (std::size_t y = 0; y < spec_.latent_height; ++y) {
      for (std::size_t x = 0; x < spec_.latent_width; ++x) {
        const auto dst = static_cast<Eigen::Index>((y / div) * layer.size.width + x / div);
        if (c.subject && y >= c.subject->origin_y && y < c.subject->origin_y + spec_.subject_size &&
            x >= c.subject->origin_x && x < c.subject->origin_x + spec_.subject_size) {
          const auto rel = static_cast<Eigen::Index>((y - c.subject->origin_y) * spec_.subject_size +
                                                     (x - c.subject->origin_x));
          om.row(dst) += layer.subject_code.row(rel) * inv;
        } else {
          om.row(dst) += c.background_code[li].row(static_cast<Eigen::Index>(y * spec_.latent_width + x)) * inv;
        }
      }
    }
    om.noalias() += spec_.feature_noise * (detail::tokens(z_l) * layer.projection.transpose());
    return out;
  }

  TensorGrid cross_attention(const Condition& c) const {
    TensorGrid map(spec_.latent_height, spec_.latent_width, 1, spec_.background_attention);
    if (!c.subject) return map;
    for (std::size_t y = 0; y < spec_.subject_size; ++y) {
      for (std::size_t x = 0; x < spec_.subject_size; ++x) map(c.subject->origin_y + y, c.subject->origin_x + x, 0) = 1.0;
    }
    return map;
  }

  SyntheticBackendSpec spec_;
  Eigen::MatrixXd mix_;
  TensorGrid time_bias_;
  std::vector<Layer> layers_;
  std::vector<Condition> conditions_;
  ConditionHandle null_ = 0;
};

}  // namespace dm
