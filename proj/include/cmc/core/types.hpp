#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace cmc {

/// Working precision of the pipeline. Double keeps finite-difference checks
/// meaningful; the Eigen GEMM path is fast enough on CPU at desk scale.
using Real = double;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<Real>;
using Vector = VectorX<Real>;
using RowVector = RowVectorX<Real>;

using Index = Eigen::Index;

}  // namespace cmc
