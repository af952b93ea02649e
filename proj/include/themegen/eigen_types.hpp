#pragma once

#include <Eigen/Dense>

namespace themegen {

// Dense working types, templated on scalar so the same code runs in float
// for training and double for gradient checking.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <class Scalar>
using Col = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

using Matf = Mat<float>;
using Matd = Mat<double>;

}  // namespace themegen
