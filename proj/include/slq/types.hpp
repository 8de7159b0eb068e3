#pragma once

#include <Eigen/Core>

namespace slq {

/// Nodal coefficients of a V_h function at the interior nodes.
using FemFunction = Eigen::VectorXd;

/// A field of V_h functions over scenarios: row j holds nodal coefficient j
/// for every scenario, contiguous in memory (the layout the row kernels use).
using Slice = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace slq
