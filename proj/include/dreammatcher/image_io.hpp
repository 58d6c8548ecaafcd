#pragma once

// 8-bit PGM/PPM rendering of masks, flow magnitudes and descriptor fields.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dreammatcher/eigen_views.hpp"
#include "dreammatcher/pca.hpp"
#include "dreammatcher/tensors.hpp"

namespace dm {

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t to_byte(double unit) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

/// Binary P5/P6 encoding.
inline std::vector<std::uint8_t> encode_pnm(const Image& img) {
  require(img.channels == 1 || img.channels == 3, ErrorKind::validation, "pnm: channels must be 1 or 3");
  require(img.pixels.size() == img.height * img.width * img.channels, ErrorKind::shape, "pnm: pixel count");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  Image img;
  const std::string magic = token();
  require(magic == "P5" || magic == "P6", ErrorKind::io, "pnm: unsupported magic");
  img.channels = magic == "P5" ? 1 : 3;
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  require(token() == "255", ErrorKind::io, "pnm: only maxval 255 supported");
  ++pos;
  require(bytes.size() - pos == img.width * img.height * img.channels, ErrorKind::io, "pnm: payload size");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

inline void write_pnm(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode_pnm(img);
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::io, "write failed: " + path.string());
}

/// Values in [0, 1] to gray levels; a binary mask renders as {0, 255}.
inline Image render_gray(const TensorGrid& grid) {
  require(grid.channels() == 1, ErrorKind::shape, "render_gray: expects one channel");
  Image img{grid.height(), grid.width(), 1, {}};
  img.pixels.reserve(grid.size());
  for (double v : grid.data()) img.pixels.push_back(to_byte(v));
  return img;
}

inline Image render_mask(const MaskGrid& mask) { return render_gray(mask.grid()); }

/// Displacement length, min-max normalized.
inline Image render_flow_magnitude(const FlowField& flow) {
  TensorGrid mag(flow.height(), flow.width(), 1);
  for (std::size_t y = 0; y < flow.height(); ++y) {
    for (std::size_t x = 0; x < flow.width(); ++x) mag(y, x, 0) = std::hypot(flow.dx(y, x), flow.dy(y, x));
  }
  return render_gray(minmax_normalize(mag));
}

/// First three principal components of the pixel vectors, each min-max
/// normalized to one color channel. Components beyond the data rank stay 0.
inline Image render_pca_rgb(const TensorGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.pixels());
  const auto d = static_cast<Eigen::Index>(grid.channels());
  const auto k = std::min<Eigen::Index>({3, d, n});
  const Eigen::MatrixXd samples = detail::tokens(grid);
  const PcaResult pca = pca_fit_project(samples, static_cast<std::size_t>(k));
  Image img{grid.height(), grid.width(), 3, std::vector<std::uint8_t>(grid.pixels() * 3, 0)};
  for (Eigen::Index c = 0; c < k; ++c) {
    if (c >= k - static_cast<Eigen::Index>(pca.completed)) break;
    const double lo = pca.projected.col(c).minCoeff();
    const double hi = pca.projected.col(c).maxCoeff();
    for (Eigen::Index p = 0; p < n; ++p) {
      const double unit = hi > lo ? (pca.projected(p, c) - lo) / (hi - lo) : 0.0;
      img.pixels[static_cast<std::size_t>(p * 3 + c)] = to_byte(unit);
    }
  }
  return img;
}

}  // namespace dm
