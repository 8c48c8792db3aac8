#pragma once

#include <Eigen/Dense>

namespace khwm {

// Dense types used throughout the library, templated on scalar.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Default precision: double. Tests rely on it for finite-difference
// tolerances; training may instantiate the templated core with float.
using Real = double;
using MatX = Mat<Real>;
using VecX = Vec<Real>;

}  // namespace khwm
