#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dreammatcher/error.hpp"

namespace dm {

/// Dense H x W x C field of doubles stored row-major as (h, w, c), so the
/// channel vector of a pixel is contiguous.
class TensorGrid {
 public:
  TensorGrid() = default;

  TensorGrid(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    check_dims();
    data_.assign(height * width * channels, fill);
  }

  TensorGrid(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_dims();
    require(data_.size() == height * width * channels, ErrorKind::shape,
            "TensorGrid: data length " + std::to_string(data_.size()) + " != " +
                std::to_string(height * width * channels));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t pixels() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  double operator()(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<double> pixel(std::size_t y, std::size_t x) {
    return {data_.data() + (y * width_ + x) * channels_, channels_};
  }
  std::span<const double> pixel(std::size_t y, std::size_t x) const {
    return {data_.data() + (y * width_ + x) * channels_, channels_};
  }
  /// Pixel by flat row-major index.
  std::span<double> pixel(std::size_t flat) { return {data_.data() + flat * channels_, channels_}; }
  std::span<const double> pixel(std::size_t flat) const {
    return {data_.data() + flat * channels_, channels_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool same_extent(const TensorGrid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool same_shape(const TensorGrid& other) const noexcept {
    return same_extent(other) && channels_ == other.channels_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
  }

  friend bool operator==(const TensorGrid&, const TensorGrid&) = default;

 private:
  void check_dims() const {
    require(height_ >= 1 && width_ >= 1 && channels_ >= 1, ErrorKind::shape,
            "TensorGrid: dimensions must be >= 1");
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

inline void require_finite(const TensorGrid& grid, std::string_view where) {
  require(grid.all_finite(), ErrorKind::validation, std::string(where) + ": non-finite value in grid");
}

inline void require_same_shape(const TensorGrid& a, const TensorGrid& b, std::string_view where) {
  require(a.same_shape(b), ErrorKind::shape,
          std::string(where) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

/// Per-pixel (dx, dy) displacement in pixels of the sampled grid. Backward
/// convention: pixel x of the destination reads the source at x + F(x).
class FlowField {
 public:
  FlowField() = default;
  FlowField(std::size_t height, std::size_t width) : grid_(height, width, 2, 0.0) {}
  explicit FlowField(TensorGrid grid) : grid_(std::move(grid)) {
    require(grid_.channels() == 2, ErrorKind::shape, "FlowField: expected 2 channels");
  }

  std::size_t height() const noexcept { return grid_.height(); }
  std::size_t width() const noexcept { return grid_.width(); }

  double& dx(std::size_t y, std::size_t x) { return grid_(y, x, 0); }
  double& dy(std::size_t y, std::size_t x) { return grid_(y, x, 1); }
  double dx(std::size_t y, std::size_t x) const { return grid_(y, x, 0); }
  double dy(std::size_t y, std::size_t x) const { return grid_(y, x, 1); }

  const TensorGrid& grid() const noexcept { return grid_; }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  TensorGrid grid_;
};

/// H x W field of values in [0, 1].
class MaskGrid {
 public:
  MaskGrid() = default;
  MaskGrid(std::size_t height, std::size_t width, double fill = 0.0) : grid_(height, width, 1, fill) {
    check_range();
  }
  explicit MaskGrid(TensorGrid grid) : grid_(std::move(grid)) {
    require(grid_.channels() == 1, ErrorKind::shape, "MaskGrid: expected 1 channel");
    check_range();
  }

  std::size_t height() const noexcept { return grid_.height(); }
  std::size_t width() const noexcept { return grid_.width(); }
  std::size_t pixels() const noexcept { return grid_.pixels(); }

  double operator()(std::size_t y, std::size_t x) const { return grid_(y, x, 0); }
  double operator[](std::size_t flat) const { return grid_.data()[flat]; }
  void set(std::size_t y, std::size_t x, double v) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::validation, "MaskGrid: value outside [0,1]");
    grid_(y, x, 0) = v;
  }

  double sum() const {
    double s = 0.0;
    for (double v : grid_.data()) s += v;
    return s;
  }
  bool is_binary() const {
    return std::all_of(grid_.data().begin(), grid_.data().end(), [](double v) { return v == 0.0 || v == 1.0; });
  }

  const TensorGrid& grid() const noexcept { return grid_; }

  friend bool operator==(const MaskGrid&, const MaskGrid&) = default;

 private:
  void check_range() const {
    for (double v : grid_.data()) {
      require(v >= 0.0 && v <= 1.0, ErrorKind::validation, "MaskGrid: value outside [0,1] or non-finite");
    }
  }

  TensorGrid grid_;
};

namespace detail {

// Interpolation that returns the endpoints exactly and never leaves [a, b].
inline double lerp_exact(double a, double b, double t) {
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  const double v = a + t * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace detail

/// Bilinear sample of every channel at continuous (y, x); coordinates are
/// clamped to the border. Integer coordinates reproduce stored values exactly.
inline void sample_bilinear(const TensorGrid& grid, double y, double x, std::span<double> out) {
  const double max_y = static_cast<double>(grid.height() - 1);
  const double max_x = static_cast<double>(grid.width() - 1);
  y = std::clamp(y, 0.0, max_y);
  x = std::clamp(x, 0.0, max_x);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, grid.height() - 1);
  const std::size_t x1 = std::min(x0 + 1, grid.width() - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  for (std::size_t c = 0; c < grid.channels(); ++c) {
    const double top = detail::lerp_exact(grid(y0, x0, c), grid(y0, x1, c), fx);
    const double bottom = detail::lerp_exact(grid(y1, x0, c), grid(y1, x1, c), fx);
    out[c] = detail::lerp_exact(top, bottom, fy);
  }
}

/// Channelwise bilinear resize with corner-aligned sampling.
inline TensorGrid resize_bilinear(const TensorGrid& grid, std::size_t out_h, std::size_t out_w) {
  require_finite(grid, "resize_bilinear");
  require(out_h >= 1 && out_w >= 1, ErrorKind::shape, "resize_bilinear: output dims must be >= 1");
  if (out_h == grid.height() && out_w == grid.width()) return grid;

  auto scale = [](std::size_t in, std::size_t out) {
    return out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  };
  const double sy = scale(grid.height(), out_h);
  const double sx = scale(grid.width(), out_w);
  TensorGrid out(out_h, out_w, grid.channels());
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      sample_bilinear(grid, static_cast<double>(y) * sy, static_cast<double>(x) * sx, out.pixel(y, x));
    }
  }
  return out;
}

/// out = a * m + b * (1 - m), mask broadcast over channels. Pixels with m == 1
/// (m == 0) copy a (b) exactly.
inline TensorGrid hadamard_blend(const TensorGrid& a, const TensorGrid& b, const MaskGrid& m) {
  require_same_shape(a, b, "hadamard_blend");
  require(a.height() == m.height() && a.width() == m.width(), ErrorKind::shape,
          "hadamard_blend: mask extent mismatch");
  TensorGrid out = b;
  for (std::size_t p = 0; p < a.pixels(); ++p) {
    const double w = m[p];
    if (w == 0.0) continue;
    auto dst = out.pixel(p);
    auto src = a.pixel(p);
    if (w == 1.0) {
      std::copy(src.begin(), src.end(), dst.begin());
      continue;
    }
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = detail::lerp_exact(dst[c], src[c], w);
  }
  return out;
}

/// Affine map of all values onto [0, 1]; a constant grid maps to zeros.
inline TensorGrid minmax_normalize(const TensorGrid& grid) {
  require_finite(grid, "minmax_normalize");
  const auto [lo_it, hi_it] = std::minmax_element(grid.data().begin(), grid.data().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  TensorGrid out(grid.height(), grid.width(), grid.channels(), 0.0);
  if (hi == lo) return out;
  const double range = hi - lo;
  auto src = grid.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::clamp((src[i] - lo) / range, 0.0, 1.0);
  return out;
}

/// Concatenates grids with a common extent along the channel axis.
inline TensorGrid concat_channels(std::span<const TensorGrid> grids) {
  require(!grids.empty(), ErrorKind::shape, "concat_channels: no grids");
  std::size_t total = 0;
  for (const auto& g : grids) {
    require(g.same_extent(grids.front()), ErrorKind::shape, "concat_channels: extent mismatch");
    total += g.channels();
  }
  TensorGrid out(grids.front().height(), grids.front().width(), total);
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    auto dst = out.pixel(p);
    std::size_t offset = 0;
    for (const auto& g : grids) {
      auto src = g.pixel(p);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += g.channels();
    }
  }
  return out;
}

}  // namespace dm
