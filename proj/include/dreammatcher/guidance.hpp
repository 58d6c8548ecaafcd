#pragma once

// Semantic matching guidance. The energy is the mean over masked pixels of
// the per-pixel channel l2 distance between the warped reference clean
// latent and the target's predicted clean latent; its gradient is taken with
// the predicted noise held fixed, so d z0_hat / d z_t = 1 / sqrt(alpha_bar).

#include <cmath>
#include <cstddef>

#include "dreammatcher/schedule.hpp"
#include "dreammatcher/tensors.hpp"
#include "dreammatcher/warp.hpp"

namespace dm {

inline constexpr double kGuidanceNormEpsilon = 1e-8;

struct GuidanceParams {
  double lambda_g = 50.0;

  void validate() const {
    require(std::isfinite(lambda_g) && lambda_g >= 0.0, ErrorKind::validation, "lambda_g must be >= 0");
  }
};

/// z0_hat = (z_t - sqrt(1 - alpha_bar) * eps) / sqrt(alpha_bar)
inline TensorGrid predict_z0(const TensorGrid& z_t, const TensorGrid& eps, std::size_t t, const NoiseSchedule& sched) {
  require_same_shape(z_t, eps, "predict_z0");
  const double alpha_bar = sched.alpha_bar(t);
  const double root = std::sqrt(alpha_bar);
  const double sigma = std::sqrt(1.0 - alpha_bar);
  TensorGrid out(z_t.height(), z_t.width(), z_t.channels());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = (z_t.data()[i] - sigma * eps.data()[i]) / root;
  return out;
}

/// Warps the reference clean latent onto the target layout. A flow at another
/// resolution with the same aspect ratio is resampled first.
inline TensorGrid align_reference_z0(const TensorGrid& z0_ref, const FlowField& flow_x_to_y) {
  const bool same = flow_x_to_y.height() == z0_ref.height() && flow_x_to_y.width() == z0_ref.width();
  if (same) return warp(z0_ref, flow_x_to_y);
  require(flow_x_to_y.height() * z0_ref.width() == flow_x_to_y.width() * z0_ref.height(), ErrorKind::shape,
          "align_reference_z0: flow aspect ratio differs from latent");
  return warp(z0_ref, resize_flow(flow_x_to_y, z0_ref.height(), z0_ref.width()));
}

namespace detail {

inline void check_guidance_shapes(const TensorGrid& a, const TensorGrid& b, const MaskGrid& m) {
  require_same_shape(a, b, "guidance");
  require(a.height() == m.height() && a.width() == m.width(), ErrorKind::shape, "guidance: mask extent mismatch");
}

inline double pixel_distance(const TensorGrid& a, const TensorGrid& b, std::size_t p) {
  const auto pa = a.pixel(p);
  const auto pb = b.pixel(p);
  double sq = 0.0;
  for (std::size_t c = 0; c < pa.size(); ++c) sq += (pa[c] - pb[c]) * (pa[c] - pb[c]);
  return std::sqrt(sq);
}

}  // namespace detail

/// g = (1/|M'|) sum_{i in M'} |z0_aligned(i) - z0_tgt_hat(i)|; zero for an empty mask.
inline double guidance_energy(const TensorGrid& z0_aligned, const TensorGrid& z0_tgt_hat, const MaskGrid& m_prime) {
  detail::check_guidance_shapes(z0_aligned, z0_tgt_hat, m_prime);
  const double count = m_prime.sum();
  if (count == 0.0) return 0.0;
  double total = 0.0;
  for (std::size_t p = 0; p < m_prime.pixels(); ++p) {
    if (m_prime[p] != 0.0) total += m_prime[p] * detail::pixel_distance(z0_aligned, z0_tgt_hat, p);
  }
  return total / count;
}

/// Gradient of the energy with respect to z_t; exactly zero outside M' and at
/// pixels whose distance is at most kGuidanceNormEpsilon.
inline TensorGrid guidance_gradient(const TensorGrid& z0_aligned, const TensorGrid& z0_tgt_hat,
                                    const MaskGrid& m_prime, std::size_t t, const NoiseSchedule& sched) {
  detail::check_guidance_shapes(z0_aligned, z0_tgt_hat, m_prime);
  const double chain = 1.0 / std::sqrt(sched.alpha_bar(t));
  TensorGrid grad(z0_aligned.height(), z0_aligned.width(), z0_aligned.channels(), 0.0);
  const double count = m_prime.sum();
  if (count == 0.0) return grad;
  for (std::size_t p = 0; p < m_prime.pixels(); ++p) {
    if (m_prime[p] == 0.0) continue;
    const double dist = detail::pixel_distance(z0_aligned, z0_tgt_hat, p);
    if (dist <= kGuidanceNormEpsilon) continue;
    const double scale = m_prime[p] * chain / (count * dist);
    auto g = grad.pixel(p);
    const auto a = z0_aligned.pixel(p);
    const auto b = z0_tgt_hat.pixel(p);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = -(a[c] - b[c]) * scale;
  }
  return grad;
}

/// eps_hat = eps - lambda_g * sqrt(1 - alpha_bar) * grad
inline TensorGrid apply_guidance(const TensorGrid& eps, const TensorGrid& grad, const GuidanceParams& params,
                                 std::size_t t, const NoiseSchedule& sched) {
  require_same_shape(eps, grad, "apply_guidance");
  params.validate();
  const double weight = params.lambda_g * sched.sigma(t);
  TensorGrid out = eps;
  if (weight == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (grad.data()[i] != 0.0) out.data()[i] -= weight * grad.data()[i];
  }
  return out;
}

}  // namespace dm
