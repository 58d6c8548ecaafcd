#pragma once

// Per-step matching pipeline shared by the in-process sampler and the wire
// protocol: descriptors -> cost volume -> bidirectional flows -> M, U, M'.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "dreammatcher/attention.hpp"
#include "dreammatcher/consistency.hpp"
#include "dreammatcher/guidance.hpp"
#include "dreammatcher/matching.hpp"

namespace dm {

struct MatchingParams {
  std::size_t pca_dim = 256;
  ConsistencyParams consistency;
  std::optional<GridSize> descriptor_size;  // default: finest feature layer
};

struct StepMatch {
  DescriptorPair descriptors;
  FlowField flow_xy;  // per target pixel, displacement to the matched reference pixel
  FlowField flow_yx;  // per reference pixel, displacement to the matched target pixel
  MaskGrid m;
  MaskGrid u;
  MaskGrid m_prime;
  double mean_best_cost = 0.0;

  GridSize size() const { return {flow_xy.height(), flow_xy.width()}; }
};

inline GridSize finest_extent(std::span<const TensorGrid> grids) {
  GridSize best{0, 0};
  for (const auto& g : grids) {
    if (g.pixels() > best.pixels()) best = {g.height(), g.width()};
  }
  return best;
}

inline StepMatch compute_step_match(std::span<const TensorGrid> feats_ref, std::span<const TensorGrid> feats_tgt,
                                    std::span<const TensorGrid> cross_attn_tgt, const MatchingParams& params) {
  const GridSize res = params.descriptor_size.value_or(finest_extent(feats_tgt));
  StepMatch s;
  s.descriptors = assemble_descriptors(feats_ref, feats_tgt, res, params.pca_dim);
  const CostVolume cost = cost_volume(s.descriptors);
  s.flow_xy = argmax_flow(cost, FlowDirection::x_to_y);
  s.flow_yx = argmax_flow(cost, FlowDirection::y_to_x);
  s.mean_best_cost = mean_best_cost(cost);
  s.m = foreground_mask(cross_attn_tgt, params.consistency, res);
  s.u = cycle_confidence(s.flow_xy, s.flow_yx, s.m, params.consistency);
  s.m_prime = semantic_consistent_mask(s.m, s.u);
  return s;
}

/// Flow and mask resampled to an attention layer's grid.
struct LayerGuides {
  FlowField flow;
  MaskGrid mask;
};

inline LayerGuides layer_guides(const StepMatch& match, GridSize layer) {
  return {resize_flow(match.flow_xy, layer.height, layer.width),
          resize_mask(match.m_prime, layer.height, layer.width)};
}

/// V^W for one attention layer.
inline TensorGrid layer_appearance_values(const StepMatch& match, const TensorGrid& v_ref, const TensorGrid& v_tgt) {
  const LayerGuides g = layer_guides(match, {v_tgt.height(), v_tgt.width()});
  return appearance_values(v_ref, v_tgt, g.flow, g.mask);
}

struct GuidanceTerm {
  TensorGrid grad;  // d g / d z_t
  double energy = 0.0;
  std::size_t mask_count = 0;
};

/// Guidance energy and gradient of one target branch. The mask and flow are
/// resampled to the latent grid when the descriptor grid differs.
inline GuidanceTerm compute_guidance(const StepMatch& match, const TensorGrid& z0_ref, const TensorGrid& z0_tgt_hat,
                                     std::size_t t, const NoiseSchedule& sched) {
  const TensorGrid aligned = align_reference_z0(z0_ref, match.flow_xy);
  const MaskGrid mask = resize_mask(match.m_prime, z0_tgt_hat.height(), z0_tgt_hat.width());
  GuidanceTerm term;
  term.energy = guidance_energy(aligned, z0_tgt_hat, mask);
  term.grad = guidance_gradient(aligned, z0_tgt_hat, mask, t, sched);
  term.mask_count = static_cast<std::size_t>(mask.sum());
  return term;
}

inline double l2_norm(const TensorGrid& g) {
  double s = 0.0;
  for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace dm
