#pragma once

#include <Eigen/Dense>

#include "dreammatcher/tensors.hpp"

namespace dm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Grid as an (H*W) x C token matrix, pixels in row-major scan order.
inline Eigen::Map<const RowMatrix> tokens(const TensorGrid& g) {
  return {g.data().data(), static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(g.channels())};
}

}  // namespace detail

}  // namespace dm
