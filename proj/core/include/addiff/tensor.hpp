#pragma once

#include <Eigen/Core>

namespace addiff {

/// Dense row-major matrix used for every activation and parameter tensor.
/// Rows index batch elements (or sequence positions), columns index features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace addiff
