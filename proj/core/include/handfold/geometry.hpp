#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>

namespace handfold {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi sweeps.
// Eigenvalues are sorted descending; eigenvectors are the matching rows of
// `vectors` (unit length, mutually orthogonal).
struct SymEig3 {
  Vec3 values;
  Mat3 vectors;  // row i is the eigenvector of values[i]
};
SymEig3 eigen_sym3(const Mat3& m, double tol = 1e-10);

// Covariance of a point set around its mean (biased, 1/N).
Mat3 covariance(const PointMatrix& pts);

Mat3 rotation_about_z(double radians);

}  // namespace handfold
