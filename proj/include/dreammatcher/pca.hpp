#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "dreammatcher/error.hpp"

namespace dm {

struct PcaResult {
  Eigen::MatrixXd basis;       // D_raw x dim, orthonormal columns, descending variance
  Eigen::RowVectorXd mean;     // 1 x D_raw
  Eigen::MatrixXd projected;   // N x dim, centered samples times basis
  Eigen::VectorXd variances;   // per-component sample variance (eigenvalue / N)
  std::size_t completed = 0;   // columns filled by orthonormal completion (rank deficit)
  bool used_gram = false;

  bool rank_deficient() const noexcept { return completed > 0; }
};

namespace detail {

// Sign convention: the entry with the largest magnitude is positive.
inline void canonical_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v(idx) < 0) v = -v;
}

// Fills columns [filled, dim) with unit vectors orthogonal to the earlier ones.
inline std::size_t complete_basis(Eigen::MatrixXd& basis, Eigen::Index filled) {
  const Eigen::Index d = basis.rows();
  std::size_t added = 0;
  Eigen::Index candidate = 0;
  for (Eigen::Index col = filled; col < basis.cols(); ++col) {
    for (;; ++candidate) {
      require(candidate < d, ErrorKind::validation, "pca: cannot complete basis");
      Eigen::VectorXd v = Eigen::VectorXd::Unit(d, candidate);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index j = 0; j < col; ++j) v -= basis.col(j).dot(v) * basis.col(j);
      }
      const double norm = v.norm();
      if (norm > 1e-6) {
        basis.col(col) = v / norm;
        ++candidate;
        break;
      }
    }
    ++added;
  }
  return added;
}

}  // namespace detail

/// PCA of N x D samples (one per row) reduced to `dim` components. Uses the
/// D x D covariance when D <= N, otherwise the N x N Gram matrix. Directions
/// with (relative) zero variance are replaced by an orthonormal completion.
inline PcaResult pca_fit_project(const Eigen::MatrixXd& samples, std::size_t dim) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index d = samples.cols();
  require(dim >= 1, ErrorKind::range, "pca: dim must be >= 1");
  require(static_cast<Eigen::Index>(dim) <= d, ErrorKind::range, "pca: dim exceeds feature dimension");
  require(static_cast<Eigen::Index>(dim) <= n, ErrorKind::range, "pca: dim exceeds sample count");
  require(samples.allFinite(), ErrorKind::validation, "pca: non-finite samples");

  PcaResult r;
  r.mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - r.mean;
  const auto k = static_cast<Eigen::Index>(dim);
  r.basis = Eigen::MatrixXd::Zero(d, k);
  r.variances = Eigen::VectorXd::Zero(k);

  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd directions;  // D x m candidate principal directions, descending
  if (d <= n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(centered.transpose() * centered);
    require(solver.info() == Eigen::Success, ErrorKind::validation, "pca: eigendecomposition failed");
    eigenvalues = solver.eigenvalues().reverse();
    directions = solver.eigenvectors().rowwise().reverse();
  } else {
    r.used_gram = true;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(centered * centered.transpose());
    require(solver.info() == Eigen::Success, ErrorKind::validation, "pca: eigendecomposition failed");
    eigenvalues = solver.eigenvalues().reverse();
    const Eigen::MatrixXd u = solver.eigenvectors().rowwise().reverse();
    directions = Eigen::MatrixXd::Zero(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (eigenvalues(j) > 0) directions.col(j) = centered.transpose() * u.col(j) / std::sqrt(eigenvalues(j));
    }
  }

  const double top = std::max(eigenvalues.size() > 0 ? eigenvalues(0) : 0.0, 0.0);
  const double cutoff = std::max(top * 1e-9, 1e-300);
  Eigen::Index filled = 0;
  for (; filled < k && filled < eigenvalues.size(); ++filled) {
    if (eigenvalues(filled) <= cutoff) break;
    Eigen::VectorXd v = directions.col(filled);
    // Re-orthogonalize: the Gram route loses orthogonality for small eigenvalues.
    for (Eigen::Index j = 0; j < filled; ++j) v -= r.basis.col(j).dot(v) * r.basis.col(j);
    v.normalize();
    detail::canonical_sign(v);
    r.basis.col(filled) = v;
    r.variances(filled) = eigenvalues(filled) / static_cast<double>(n);
  }
  if (filled < k) {
    if (!r.used_gram) {
      // Null-space eigenvectors of the covariance already complete the basis.
      for (Eigen::Index j = filled; j < k; ++j) r.basis.col(j) = directions.col(j);
      r.completed = static_cast<std::size_t>(k - filled);
    } else {
      r.completed = detail::complete_basis(r.basis, filled);
    }
  }
  r.projected = centered * r.basis;
  return r;
}

}  // namespace dm
