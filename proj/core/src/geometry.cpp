#include "handfold/geometry.hpp"

#include <cmath>

namespace handfold {

SymEig3 eigen_sym3(const Mat3& m, double tol) {
  // Cyclic Jacobi on the symmetric input; V accumulates the rotations.
  Mat3 a = 0.5 * (m + m.transpose());
  Mat3 v = Mat3::Identity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::sqrt(a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2));
    double diag = std::max({std::abs(a(0, 0)), std::abs(a(1, 1)), std::abs(a(2, 2)), 1e-300});
    if (off <= tol * diag) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Mat3 r = Mat3::Identity();
        r(p, p) = c;
        r(q, q) = c;
        r(p, q) = s;
        r(q, p) = -s;
        a = r.transpose() * a * r;
        v = v * r;
      }
    }
  }
  // Sort eigenpairs by descending eigenvalue (stable for ties).
  int order[3] = {0, 1, 2};
  for (int i = 0; i < 2; ++i)
    for (int j = i + 1; j < 3; ++j)
      if (a(order[j], order[j]) > a(order[i], order[i])) std::swap(order[i], order[j]);
  SymEig3 out;
  for (int i = 0; i < 3; ++i) {
    out.values[i] = a(order[i], order[i]);
    out.vectors.row(i) = v.col(order[i]).transpose();
  }
  return out;
}

Mat3 covariance(const PointMatrix& pts) {
  const auto n = pts.rows();
  Vec3 mean = pts.colwise().mean().transpose();
  Mat3 cov = Mat3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3 d = pts.row(i).transpose() - mean;
    cov += d * d.transpose();
  }
  return cov / static_cast<double>(n);
}

Mat3 rotation_about_z(double radians) {
  Mat3 r = Mat3::Identity();
  const double c = std::cos(radians), s = std::sin(radians);
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  return r;
}

}  // namespace handfold
