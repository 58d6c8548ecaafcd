#pragma once

#include <cmath>

#include "dreammatcher/tensors.hpp"

namespace dm {

/// Backward warp: out(x) = grid(x + F(x)), bilinear with border clamp.
inline TensorGrid warp(const TensorGrid& grid, const FlowField& flow) {
  require(grid.height() == flow.height() && grid.width() == flow.width(), ErrorKind::shape,
          "warp: flow " + std::to_string(flow.height()) + "x" + std::to_string(flow.width()) +
              " does not match grid " + grid.shape_string());
  require_finite(grid, "warp");
  require_finite(flow.grid(), "warp(flow)");
  TensorGrid out(grid.height(), grid.width(), grid.channels());
  for (std::size_t y = 0; y < grid.height(); ++y) {
    for (std::size_t x = 0; x < grid.width(); ++x) {
      sample_bilinear(grid, static_cast<double>(y) + flow.dy(y, x), static_cast<double>(x) + flow.dx(y, x),
                      out.pixel(y, x));
    }
  }
  return out;
}

/// Resamples a flow to another resolution, rescaling displacements by the
/// per-axis size ratio.
inline FlowField resize_flow(const FlowField& flow, std::size_t out_h, std::size_t out_w) {
  if (out_h == flow.height() && out_w == flow.width()) return flow;
  TensorGrid resized = resize_bilinear(flow.grid(), out_h, out_w);
  const double sy = static_cast<double>(out_h) / static_cast<double>(flow.height());
  const double sx = static_cast<double>(out_w) / static_cast<double>(flow.width());
  for (std::size_t p = 0; p < resized.pixels(); ++p) {
    auto d = resized.pixel(p);
    d[0] *= sx;
    d[1] *= sy;
  }
  return FlowField(std::move(resized));
}

/// Resamples a binary mask and re-binarizes at 0.5.
inline MaskGrid resize_mask(const MaskGrid& mask, std::size_t out_h, std::size_t out_w) {
  if (out_h == mask.height() && out_w == mask.width()) return mask;
  TensorGrid resized = resize_bilinear(mask.grid(), out_h, out_w);
  for (auto& v : resized.data()) v = v >= 0.5 ? 1.0 : 0.0;
  return MaskGrid(std::move(resized));
}

}  // namespace dm
