#pragma once

#include <Eigen/Core>

namespace zoomshot {

/// Row-major dense matrix: one feature vector per row.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Compute precision. Interchange files store float; everything after load is double.
using Matrix = RowMatrix<double>;
using Vector = RowVector<double>;
using FloatMatrix = RowMatrix<float>;

}  // namespace zoomshot
