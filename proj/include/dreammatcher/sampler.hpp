#pragma once

// Dual-branch sampling. The reference latent is inverted with deterministic
// DDIM and reconstructed alongside a target branch started from seeded
// noise. At gated steps the target's self-attention layers are re-evaluated
// with appearance matching and its noise prediction receives the semantic
// matching guidance term. Outside the gates the target path is plain DDIM
// with classifier-free guidance.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dreammatcher/backend.hpp"
#include "dreammatcher/engine.hpp"
#include "dreammatcher/guidance.hpp"
#include "dreammatcher/schedule.hpp"

namespace dm {

/// z_{t-1} = sqrt(ab_{t-1}) * z0_hat + sqrt(1 - ab_{t-1}) * eps  (eta = 0)
inline TensorGrid ddim_step(const TensorGrid& z_t, const TensorGrid& eps_hat, std::size_t t, const NoiseSchedule& sched) {
  require(t >= 1, ErrorKind::range, "ddim_step: t must be >= 1");
  const TensorGrid z0 = predict_z0(z_t, eps_hat, t, sched);
  const double a = std::sqrt(sched.alpha_bar(t - 1));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t - 1));
  TensorGrid out(z_t.height(), z_t.width(), z_t.channels());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * z0.data()[i] + b * eps_hat.data()[i];
  return out;
}

/// Inverse of ddim_step for a known eps: the z_t that steps to z_prev.
inline TensorGrid ddim_inverse_step(const TensorGrid& z_prev, const TensorGrid& eps, std::size_t t,
                                    const NoiseSchedule& sched) {
  require(t >= 1, ErrorKind::range, "ddim_inverse_step: t must be >= 1");
  require_same_shape(z_prev, eps, "ddim_inverse_step");
  const double ab_prev = sched.alpha_bar(t - 1);
  const double ab = sched.alpha_bar(t);
  const double s_prev = std::sqrt(1.0 - ab_prev);
  const double ratio = std::sqrt(ab) / std::sqrt(ab_prev);
  const double s = std::sqrt(1.0 - ab);
  TensorGrid out(z_prev.height(), z_prev.width(), z_prev.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = ratio * (z_prev.data()[i] - s_prev * eps.data()[i]) + s * eps.data()[i];
  }
  return out;
}

inline TensorGrid classifier_free_guidance(const TensorGrid& eps_uncond, const TensorGrid& eps_cond, double scale) {
  require_same_shape(eps_uncond, eps_cond, "classifier_free_guidance");
  require(scale >= 1.0, ErrorKind::validation, "classifier_free_guidance: scale must be >= 1");
  if (scale == 1.0) return eps_cond;
  TensorGrid out(eps_cond.height(), eps_cond.width(), eps_cond.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = eps_uncond.data()[i] + scale * (eps_cond.data()[i] - eps_uncond.data()[i]);
  }
  return out;
}

struct InversionOptions {
  // Fixed-point refinement of eps(z_t, t) per step; 0 gives the classic
  // one-shot inversion using eps(z_{t-1}, t).
  std::size_t max_refinements = 30;
  double tolerance = 1e-13;
};

/// Trajectory z_0 .. z_T of deterministic DDIM inversion.
inline std::vector<TensorGrid> ddim_invert(Denoiser& backend, const TensorGrid& z0, ConditionHandle cond,
                                           const NoiseSchedule& sched, std::size_t steps,
                                           const InversionOptions& options = {}) {
  require(steps >= 1 && steps <= sched.steps(), ErrorKind::range, "ddim_invert: steps outside schedule");
  require_finite(z0, "ddim_invert");
  std::vector<TensorGrid> trajectory{z0};
  const ExtractionSpec none;
  for (std::size_t t = 1; t <= steps; ++t) {
    const TensorGrid& prev = trajectory.back();
    TensorGrid z;
    try {
      TensorGrid eps = backend.denoise(prev, t, cond, none).eps;
      z = ddim_inverse_step(prev, eps, t, sched);
      for (std::size_t it = 0; it < options.max_refinements; ++it) {
        eps = backend.denoise(z, t, cond, none).eps;
        TensorGrid next = ddim_inverse_step(prev, eps, t, sched);
        double change = 0.0;
        for (std::size_t i = 0; i < next.size(); ++i) change = std::max(change, std::abs(next.data()[i] - z.data()[i]));
        z = std::move(next);
        if (change <= options.tolerance) break;
      }
    } catch (const Error& e) {
      fail(e.kind(), "ddim_invert at t=" + std::to_string(t) + ": " + e.what());
    }
    trajectory.push_back(std::move(z));
  }
  return trajectory;
}

/// Half-open range of step indices; index i runs timestep T - i.
struct StepRange {
  std::size_t begin = 4;
  std::size_t end = 50;

  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  bool empty() const noexcept { return end <= begin; }
  friend bool operator==(const StepRange&, const StepRange&) = default;
};

struct SessionConfig {
  std::size_t total_steps = 50;
  StepRange ama_steps{4, 50};  // gates both appearance matching and guidance
  std::vector<int> ama_layers{1, 2, 3};
  std::vector<int> descriptor_layers{2, 3};
  double lambda_c = 0.4;
  double lambda_g = 50.0;
  double cfg_scale = 7.5;
  std::size_t pca_dim = 256;
  double mask_threshold = 0.5;
  std::uint64_t seed = 0;
  std::optional<GridSize> descriptor_size;
  bool diagnostics = false;              // compute matching at every step for observers
  bool capture_attention_weights = false;
  InversionOptions inversion;

  void validate(const Denoiser& backend) const {
    require(total_steps >= 1, ErrorKind::config, "total_steps must be >= 1");
    require(ama_steps.empty() || ama_steps.end <= total_steps, ErrorKind::config,
            "ama_steps must lie within [0, total_steps)");
    require(std::isfinite(cfg_scale) && cfg_scale >= 1.0, ErrorKind::config, "cfg_scale must be >= 1");
    require(pca_dim >= 1, ErrorKind::config, "pca_dim must be >= 1");
    require(!descriptor_layers.empty(), ErrorKind::config, "descriptor_layers must not be empty");
    ConsistencyParams{lambda_c, mask_threshold}.validate();
    GuidanceParams{lambda_g}.validate();
    std::set<int> available;
    for (const auto& l : backend.decoder_layers()) available.insert(l.index);
    for (int l : descriptor_layers) {
      require(available.count(l) == 1, ErrorKind::config, "descriptor layer " + std::to_string(l) + " not available");
    }
    for (int l : ama_layers) {
      require(available.count(l) == 1, ErrorKind::config, "ama layer " + std::to_string(l) + " not available");
    }
  }

  MatchingParams matching() const { return {pca_dim, {lambda_c, mask_threshold}, descriptor_size}; }

  /// Same session with appearance matching and guidance switched off.
  SessionConfig baseline() const {
    SessionConfig c = *this;
    c.ama_steps = {0, 0};
    c.lambda_g = 0.0;
    return c;
  }
};

struct StepRecord {
  std::size_t index = 0;
  std::size_t timestep = 0;
  bool ama_active = false;
  bool guidance_active = false;
  std::size_t mprime_count = 0;
  double energy = 0.0;     // conditional target branch
  double grad_norm = 0.0;  // conditional target branch
};

/// Everything produced during one step, handed to observers.
struct StepDetail {
  const StepRecord& record;
  const StepMatch* match = nullptr;                          // null when not computed
  const DenoiseResponse& reference;                          // reference branch
  const DenoiseResponse& target_plain;                       // conditional target, plain attention
  const DenoiseResponse* target_ama = nullptr;               // conditional target, appearance matching
  const std::map<int, TensorGrid>* appearance_values = nullptr;  // V^W per layer (conditional branch)
};

using StepObserver = std::function<void(const StepDetail&)>;

struct SessionResult {
  TensorGrid target_latent;
  TensorGrid reference_latent;  // reconstruction of the reference z_0
  std::vector<TensorGrid> inversion;
  std::vector<StepRecord> steps;
};

/// Self-attention processor that runs appearance matching on gated layers.
class AmaProcessor final : public AttentionProcessor {
 public:
  AmaProcessor(const DenoiseResponse& reference, const StepMatch& match, const std::vector<int>& layers)
      : reference_(reference), match_(match), layers_(layers.begin(), layers.end()) {}

  TensorGrid process(int layer, const TensorGrid& q, const TensorGrid& k, const TensorGrid& v, std::size_t num_heads,
                     AttentionWeights* weights_out) override {
    if (layers_.count(layer) == 0) return plain_.process(layer, q, k, v, num_heads, weights_out);
    const auto it = reference_.attention.find(layer);
    require(it != reference_.attention.end(), ErrorKind::backend,
            "ama: reference values missing for layer " + std::to_string(layer));
    TensorGrid values = layer_appearance_values(match_, it->second.v, v);
    AttentionWeights weights = attention_weights(q, k, num_heads);
    TensorGrid out = apply_attention(weights, values);
    if (weights_out != nullptr) *weights_out = std::move(weights);
    values_[layer] = std::move(values);
    return out;
  }

  const std::map<int, TensorGrid>& values() const noexcept { return values_; }

 private:
  const DenoiseResponse& reference_;
  const StepMatch& match_;
  std::set<int> layers_;
  std::map<int, TensorGrid> values_;
  DefaultAttentionProcessor plain_;
};

inline TensorGrid gaussian_latent(GridSize size, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TensorGrid z(size.height, size.width, channels);
  for (auto& v : z.data()) v = normal(rng);
  return z;
}

inline SessionResult run_dual_branch(Denoiser& backend, const SessionConfig& config, const NoiseSchedule& sched,
                                     const TensorGrid& ref_latent_z0, ConditionHandle ref_cond,
                                     ConditionHandle tgt_cond, const StepObserver& observer = {}) {
  config.validate(backend);
  require(sched.steps() == config.total_steps, ErrorKind::config,
          "noise schedule has " + std::to_string(sched.steps()) + " steps, config expects " +
              std::to_string(config.total_steps));
  const std::size_t T = config.total_steps;

  SessionResult result;
  result.inversion = ddim_invert(backend, ref_latent_z0, ref_cond, sched, T, config.inversion);
  TensorGrid z_ref = result.inversion.back();
  TensorGrid z_tgt = gaussian_latent(backend.latent_size(), backend.latent_channels(), config.seed);

  const bool use_cfg = config.cfg_scale > 1.0;
  const MatchingParams matching = config.matching();
  const GuidanceParams guidance{config.lambda_g};

  ExtractionSpec needs;
  needs.feature_layers = config.descriptor_layers;
  needs.attention_layers = config.ama_layers;
  needs.cross_attention = true;
  needs.attention_weights = config.capture_attention_weights;

  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t t = T - i;
    StepRecord record;
    record.index = i;
    record.timestep = t;
    record.ama_active = config.ama_steps.contains(i);
    record.guidance_active = record.ama_active && config.lambda_g > 0.0;

    try {
      const DenoiseResponse ref = backend.denoise(z_ref, t, ref_cond, needs);
      const DenoiseResponse tgt_cond_plain = backend.denoise(z_tgt, t, tgt_cond, needs);
      std::optional<DenoiseResponse> tgt_uncond_plain;
      if (use_cfg) tgt_uncond_plain = backend.denoise(z_tgt, t, backend.null_condition(), needs);

      std::optional<StepMatch> match;
      if (record.ama_active || config.diagnostics) {
        std::vector<TensorGrid> feats_ref;
        std::vector<TensorGrid> feats_tgt;
        for (int l : config.descriptor_layers) {
          feats_ref.push_back(ref.decoder_features.at(l));
          feats_tgt.push_back(tgt_cond_plain.decoder_features.at(l));
        }
        match = compute_step_match(feats_ref, feats_tgt, tgt_cond_plain.cross_attn_maps, matching);
        record.mprime_count = static_cast<std::size_t>(match->m_prime.sum());
      }

      // Second pass of the target branches with appearance matching.
      std::optional<DenoiseResponse> tgt_cond_ama;
      std::optional<DenoiseResponse> tgt_uncond_ama;
      std::map<int, TensorGrid> cond_values;
      if (record.ama_active && record.mprime_count > 0) {
        AmaProcessor cond_proc(ref, *match, config.ama_layers);
        tgt_cond_ama = backend.denoise(z_tgt, t, tgt_cond, needs, &cond_proc);
        cond_values = cond_proc.values();
        if (use_cfg) {
          AmaProcessor uncond_proc(ref, *match, config.ama_layers);
          tgt_uncond_ama = backend.denoise(z_tgt, t, backend.null_condition(), needs, &uncond_proc);
        }
      }
      TensorGrid eps_cond = tgt_cond_ama ? tgt_cond_ama->eps : tgt_cond_plain.eps;
      std::optional<TensorGrid> eps_uncond;
      if (use_cfg) eps_uncond = tgt_uncond_ama ? tgt_uncond_ama->eps : tgt_uncond_plain->eps;

      if (match) {
        const GuidanceTerm cond_term = compute_guidance(*match, ref_latent_z0, predict_z0(z_tgt, eps_cond, t, sched), t, sched);
        record.energy = cond_term.energy;
        record.grad_norm = cond_term.mask_count > 0 ? l2_norm(cond_term.grad) : 0.0;
        if (record.guidance_active) {
          if (eps_uncond) {
            const GuidanceTerm uncond_term =
                compute_guidance(*match, ref_latent_z0, predict_z0(z_tgt, *eps_uncond, t, sched), t, sched);
            eps_uncond = apply_guidance(*eps_uncond, uncond_term.grad, guidance, t, sched);
          }
          eps_cond = apply_guidance(eps_cond, cond_term.grad, guidance, t, sched);
        }
      }

      const TensorGrid eps = use_cfg ? classifier_free_guidance(*eps_uncond, eps_cond, config.cfg_scale) : eps_cond;

      if (observer) {
        StepDetail detail{record,          match ? &*match : nullptr,
                          ref,             tgt_cond_plain,
                          tgt_cond_ama ? &*tgt_cond_ama : nullptr,
                          tgt_cond_ama ? &cond_values : nullptr};
        observer(detail);
      }

      z_tgt = ddim_step(z_tgt, eps, t, sched);
      z_ref = ddim_step(z_ref, ref.eps, t, sched);
      require_finite(z_tgt, "target latent");
    } catch (const Error& e) {
      fail(e.kind(), "step " + std::to_string(i) + " (t=" + std::to_string(t) + "): " + e.what());
    }
    result.steps.push_back(record);
  }
  result.target_latent = std::move(z_tgt);
  result.reference_latent = std::move(z_ref);
  return result;
}

}  // namespace dm
