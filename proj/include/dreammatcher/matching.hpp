#pragma once

// Semantic correspondence between a reference (X) and target (Y) descriptor
// field: joint PCA descriptors, the all-pairs cosine cost volume, and hard
// argmax flows in both directions.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dreammatcher/eigen_views.hpp"
#include "dreammatcher/parallel.hpp"
#include "dreammatcher/pca.hpp"
#include "dreammatcher/tensors.hpp"
#include "dreammatcher/warp.hpp"

namespace dm {

struct GridSize {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels() const noexcept { return height * width; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

struct DescriptorPair {
  TensorGrid psi_ref;
  TensorGrid psi_tgt;
  Eigen::MatrixXd basis;    // D_raw x D_pca
  Eigen::RowVectorXd mean;  // 1 x D_raw
  std::size_t completed_directions = 0;
};

/// Resizes every layer to `target_res`, concatenates channels, fits one PCA on
/// the union of reference and target pixels and projects both onto it.
inline DescriptorPair assemble_descriptors(std::span<const TensorGrid> layer_feats_ref,
                                           std::span<const TensorGrid> layer_feats_tgt, GridSize target_res,
                                           std::size_t pca_dim) {
  require(!layer_feats_ref.empty(), ErrorKind::shape, "assemble_descriptors: no reference layers");
  require(layer_feats_ref.size() == layer_feats_tgt.size(), ErrorKind::shape,
          "assemble_descriptors: layer count mismatch");
  std::vector<TensorGrid> ref;
  std::vector<TensorGrid> tgt;
  for (std::size_t l = 0; l < layer_feats_ref.size(); ++l) {
    require(layer_feats_ref[l].channels() == layer_feats_tgt[l].channels(), ErrorKind::shape,
            "assemble_descriptors: channel mismatch in layer " + std::to_string(l));
    ref.push_back(resize_bilinear(layer_feats_ref[l], target_res.height, target_res.width));
    tgt.push_back(resize_bilinear(layer_feats_tgt[l], target_res.height, target_res.width));
  }
  const TensorGrid ref_cat = concat_channels(ref);
  const TensorGrid tgt_cat = concat_channels(tgt);
  const auto n = static_cast<Eigen::Index>(target_res.pixels());
  const auto d = static_cast<Eigen::Index>(ref_cat.channels());
  require(static_cast<Eigen::Index>(pca_dim) <= d, ErrorKind::range,
          "assemble_descriptors: pca_dim " + std::to_string(pca_dim) + " exceeds raw dimension " +
              std::to_string(d));
  require(static_cast<Eigen::Index>(pca_dim) <= 2 * n, ErrorKind::range,
          "assemble_descriptors: pca_dim exceeds joint sample count");

  Eigen::MatrixXd samples(2 * n, d);
  samples.topRows(n) = detail::tokens(ref_cat);
  samples.bottomRows(n) = detail::tokens(tgt_cat);
  PcaResult pca = pca_fit_project(samples, pca_dim);

  DescriptorPair pair;
  pair.psi_ref = TensorGrid(target_res.height, target_res.width, pca_dim);
  pair.psi_tgt = TensorGrid(target_res.height, target_res.width, pca_dim);
  Eigen::Map<RowMatrix>(pair.psi_ref.data().data(), n, static_cast<Eigen::Index>(pca_dim)) = pca.projected.topRows(n);
  Eigen::Map<RowMatrix>(pair.psi_tgt.data().data(), n, static_cast<Eigen::Index>(pca_dim)) =
      pca.projected.bottomRows(n);
  pair.basis = std::move(pca.basis);
  pair.mean = std::move(pca.mean);
  pair.completed_directions = pca.completed;
  return pair;
}

/// C(i, j): cosine similarity of reference pixel i and target pixel j (flat
/// row-major indices).
struct CostVolume {
  GridSize size;
  RowMatrix values;

  double operator()(std::size_t i, std::size_t j) const {
    return values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
};

namespace detail {

inline RowMatrix unit_rows(const TensorGrid& g) {
  RowMatrix m = tokens(g);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (norm > 0.0) {
      m.row(r) /= norm;
    } else {
      m.row(r).setZero();
    }
  }
  return m;
}

inline constexpr std::size_t kCostChunk = 256;

}  // namespace detail

inline CostVolume cost_volume(const TensorGrid& psi_ref, const TensorGrid& psi_tgt) {
  require_same_shape(psi_ref, psi_tgt, "cost_volume");
  require_finite(psi_ref, "cost_volume");
  require_finite(psi_tgt, "cost_volume");
  const RowMatrix x = detail::unit_rows(psi_ref);
  const RowMatrix y = detail::unit_rows(psi_tgt);
  const auto n = static_cast<Eigen::Index>(psi_ref.pixels());

  CostVolume c{{psi_ref.height(), psi_ref.width()}, RowMatrix(n, n)};
  // Fixed column chunks: every chunk is the same product regardless of the
  // worker count, so the result is deterministic.
  parallel_chunks(static_cast<std::size_t>(n), detail::kCostChunk, [&](std::size_t begin, std::size_t end) {
    const auto b = static_cast<Eigen::Index>(begin);
    const auto len = static_cast<Eigen::Index>(end - begin);
    c.values.middleCols(b, len).noalias() = x * y.middleRows(b, len).transpose();
  });
  return c;
}

inline CostVolume cost_volume(const DescriptorPair& pair) { return cost_volume(pair.psi_ref, pair.psi_tgt); }

enum class FlowDirection { x_to_y, y_to_x };

namespace detail {

inline FlowField flow_from_matches(std::span<const std::size_t> match, GridSize size) {
  FlowField flow(size.height, size.width);
  for (std::size_t p = 0; p < match.size(); ++p) {
    const auto py = static_cast<double>(p / size.width);
    const auto px = static_cast<double>(p % size.width);
    flow.dx(p / size.width, p % size.width) = static_cast<double>(match[p] % size.width) - px;
    flow.dy(p / size.width, p % size.width) = static_cast<double>(match[p] / size.width) - py;
  }
  return flow;
}

}  // namespace detail

/// Best-matching flat index per pixel of the destination grid. x_to_y: for
/// every target j, argmax over reference i of C(i, j). y_to_x: for every
/// reference i, argmax over target j. Ties go to the smallest flat index.
inline std::vector<std::size_t> argmax_matches(const CostVolume& c, FlowDirection direction) {
  const auto n = static_cast<std::size_t>(c.values.rows());
  require(c.values.cols() == c.values.rows() && n == c.size.pixels(), ErrorKind::shape,
          "argmax_flow: cost volume must be (H*W) x (H*W)");
  std::vector<std::size_t> match(n, 0);
  if (direction == FlowDirection::y_to_x) {
    parallel_chunks(n, 64, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const double* row = c.values.data() + i * n;
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
          if (row[j] > row[best]) best = j;
        }
        match[i] = best;
      }
    });
  } else {
    parallel_chunks(n, 256, [&](std::size_t begin, std::size_t end) {
      std::vector<double> best(c.values.data() + begin, c.values.data() + end);
      for (std::size_t i = 1; i < n; ++i) {
        const double* row = c.values.data() + i * n;
        for (std::size_t j = begin; j < end; ++j) {
          if (row[j] > best[j - begin]) {
            best[j - begin] = row[j];
            match[j] = i;
          }
        }
      }
    });
  }
  return match;
}

inline FlowField argmax_flow(const CostVolume& c, FlowDirection direction) {
  return detail::flow_from_matches(argmax_matches(c, direction), c.size);
}

/// Mean over target pixels of max_i C(i, j).
inline double mean_best_cost(const CostVolume& c) {
  const auto n = c.values.rows();
  if (n == 0) return 0.0;
  return c.values.colwise().maxCoeff().mean();
}

}  // namespace dm
