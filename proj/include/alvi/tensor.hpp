#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>

namespace alvi {

/// Dense row-major matrix; rows are samples/tokens, columns are channels/features.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace alvi
