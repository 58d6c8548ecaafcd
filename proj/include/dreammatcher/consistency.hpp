#pragma once

// Foreground mask from cross-attention, cycle-consistency confidence and the
// semantic-consistent mask M' = M * U.

#include <cmath>
#include <span>
#include <vector>

#include "dreammatcher/matching.hpp"
#include "dreammatcher/tensors.hpp"

namespace dm {

struct ConsistencyParams {
  double lambda_c = 0.4;
  double mask_threshold = 0.5;  // on the min-max normalized cross-attention map

  void validate() const {
    require(std::isfinite(lambda_c) && lambda_c >= 0.0, ErrorKind::validation, "lambda_c must be >= 0");
    require(mask_threshold >= 0.0 && mask_threshold <= 1.0, ErrorKind::validation,
            "mask_threshold must lie in [0,1]");
  }
};

/// Averages the maps at out_res, min-max normalizes and keeps values strictly
/// above the threshold.
inline MaskGrid foreground_mask(std::span<const TensorGrid> cross_attn_maps, const ConsistencyParams& params,
                                GridSize out_res) {
  require(!cross_attn_maps.empty(), ErrorKind::validation, "foreground_mask: no cross-attention maps");
  params.validate();
  TensorGrid mean(out_res.height, out_res.width, 1, 0.0);
  for (const auto& map : cross_attn_maps) {
    require(map.channels() == 1, ErrorKind::shape, "foreground_mask: maps must be single-channel");
    for (double v : map.data()) require(v >= 0.0, ErrorKind::validation, "foreground_mask: negative map value");
    const TensorGrid resized = resize_bilinear(map, out_res.height, out_res.width);
    for (std::size_t i = 0; i < mean.size(); ++i) mean.data()[i] += resized.data()[i];
  }
  for (auto& v : mean.data()) v /= static_cast<double>(cross_attn_maps.size());
  TensorGrid norm = minmax_normalize(mean);
  for (auto& v : norm.data()) v = v > params.mask_threshold ? 1.0 : 0.0;
  return MaskGrid(std::move(norm));
}

/// gamma * lambda_c with gamma = H * |M| / (H * W).
inline double cycle_threshold(const MaskGrid& m_t, double lambda_c) {
  const double fg_ratio = m_t.sum() / static_cast<double>(m_t.pixels());
  return static_cast<double>(m_t.height()) * fg_ratio * lambda_c;
}

/// Forward-backward error e(x) = |F_xy(x) + F_yx(x + F_xy(x))|, the reverse
/// flow sampled bilinearly with border clamp.
inline TensorGrid cycle_error(const FlowField& f_xy, const FlowField& f_yx) {
  require(f_xy.height() == f_yx.height() && f_xy.width() == f_yx.width(), ErrorKind::shape,
          "cycle_confidence: flow shape mismatch");
  TensorGrid err(f_xy.height(), f_xy.width(), 1);
  double back[2];
  for (std::size_t y = 0; y < f_xy.height(); ++y) {
    for (std::size_t x = 0; x < f_xy.width(); ++x) {
      const double dx = f_xy.dx(y, x);
      const double dy = f_xy.dy(y, x);
      sample_bilinear(f_yx.grid(), static_cast<double>(y) + dy, static_cast<double>(x) + dx, back);
      err(y, x, 0) = std::hypot(dx + back[0], dy + back[1]);
    }
  }
  return err;
}

inline MaskGrid cycle_confidence(const FlowField& f_xy, const FlowField& f_yx, const MaskGrid& m_t,
                                 const ConsistencyParams& params) {
  params.validate();
  require(m_t.height() == f_xy.height() && m_t.width() == f_xy.width(), ErrorKind::shape,
          "cycle_confidence: mask shape mismatch");
  const TensorGrid err = cycle_error(f_xy, f_yx);
  const double threshold = cycle_threshold(m_t, params.lambda_c);
  TensorGrid u(err.height(), err.width(), 1);
  for (std::size_t i = 0; i < err.size(); ++i) u.data()[i] = err.data()[i] < threshold ? 1.0 : 0.0;
  return MaskGrid(std::move(u));
}

inline MaskGrid semantic_consistent_mask(const MaskGrid& m_t, const MaskGrid& u_t) {
  require(m_t.height() == u_t.height() && m_t.width() == u_t.width(), ErrorKind::shape,
          "semantic_consistent_mask: shape mismatch");
  TensorGrid out(m_t.height(), m_t.width(), 1);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = m_t[i] * u_t[i];
  return MaskGrid(std::move(out));
}

}  // namespace dm
