#include "handfold/augment.hpp"

#include <random>

namespace handfold {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

AugmentParams sample_augment(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rot(-37.5, 37.5);
  std::uniform_real_distribution<double> scl(0.9, 1.1);
  std::uniform_real_distribution<double> trn(-10.0, 10.0);
  AugmentParams p;
  p.rotation_z_rad = rot(rng) * kPi / 180.0;
  p.scale = scl(rng);
  p.translation_mm = Vec3(trn(rng), trn(rng), trn(rng));
  return p;
}

PointFrame apply_augment(const PointFrame& frame, const AugmentParams& params) {
  const Mat3 rot = rotation_about_z(params.rotation_z_rad);
  const Vec3 t_norm = params.translation_mm / frame.transform.scale;
  auto map_point = [&](const Vec3& p) -> Vec3 { return params.scale * (rot * p) + t_norm; };

  PointFrame out;
  out.transform = frame.transform;
  out.points.resize(frame.points.rows(), 3);
  out.normals.resize(frame.normals.rows(), 3);
  for (Eigen::Index i = 0; i < frame.points.rows(); ++i) {
    out.points.row(i) = map_point(frame.points.row(i).transpose()).transpose();
    out.normals.row(i) = (rot * frame.normals.row(i).transpose()).transpose();
  }
  if (frame.gt_joints) {
    PointMatrix gt(frame.gt_joints->rows(), 3);
    for (Eigen::Index i = 0; i < gt.rows(); ++i) {
      gt.row(i) = map_point(frame.gt_joints->row(i).transpose()).transpose();
    }
    out.gt_joints = std::move(gt);
  }
  return out;
}

PointFrame augment(const PointFrame& frame, std::uint64_t seed) {
  return apply_augment(frame, sample_augment(seed));
}

}  // namespace handfold
