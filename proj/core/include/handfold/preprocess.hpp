#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "handfold/common.hpp"
#include "handfold/depth_image.hpp"
#include "handfold/geometry.hpp"

namespace handfold {

struct CameraIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  void validate() const;
};

// Affine map between camera space (mm) and normalized OBB space:
//   normalized = rotation * (camera - centroid) / scale
//   camera     = rotation^T * normalized * scale + centroid
struct NormalizationTransform {
  Mat3 rotation = Mat3::Identity();  // rows are the OBB axes
  Vec3 centroid = Vec3::Zero();      // OBB centre in camera space (mm)
  double scale = 1.0;                // mm per normalized unit (longest OBB side)

  Vec3 normalize(const Vec3& camera_mm) const {
    return rotation * (camera_mm - centroid) / scale;
  }
  Vec3 denormalize(const Vec3& normalized) const {
    return rotation.transpose() * (normalized * scale) + centroid;
  }
  void validate(double tol = 1e-6) const;
};

// One hand sample in normalized OBB space.
struct PointFrame {
  PointMatrix points;   // N x 3, every coordinate in [-0.5, 0.5]
  PointMatrix normals;  // N x 3 unit vectors
  NormalizationTransform transform;
  std::optional<PointMatrix> gt_joints;  // J x 3, normalized

  std::int64_t size() const { return points.rows(); }
  void validate(double coord_tol = 1e-6, double normal_tol = 1e-4) const;
};

// Reproject masked depth pixels into camera space (mm):
//   x = (u - cx) d / fx, y = (v - cy) d / fy, z = d.
// `mask` has one entry per pixel (row-major); empty selection is an error.
PointMatrix depth_to_points(const DepthImage& depth, const CameraIntrinsics& intr,
                            const std::vector<bool>& mask);
// Convenience mask: keep pixels with depth in [min_depth_mm, max_depth_mm].
PointMatrix depth_to_points(const DepthImage& depth, const CameraIntrinsics& intr,
                            double min_depth_mm, double max_depth_mm);

Vec3 project_to_pixel(const Vec3& camera_mm, const CameraIntrinsics& intr);  // (u, v, d)

// PCA-aligned oriented-bounding-box normalization. Axis signs are fixed
// against the camera axes (rows get a non-negative dot with +x/+y/+z); if
// that leaves a reflection, the last axis is flipped to keep det = +1.
struct ObbResult {
  PointMatrix points;  // normalized coordinates
  NormalizationTransform transform;
};
ObbResult obb_normalize(const PointMatrix& camera_points_mm);

// Uniform subsample to exactly `target` points: without replacement when
// enough points exist, otherwise all inputs plus with-replacement padding.
PointMatrix subsample(const PointMatrix& points, std::int64_t target, std::uint64_t seed);

// Per-point unit normals from a plane fit over the k nearest neighbours
// (the point itself included). Signs face the camera side of the OBB frame.
PointMatrix surface_normals(const PointMatrix& points, int k = 30);

PointMatrix denormalize_joints(const PointMatrix& joints_normalized,
                               const NormalizationTransform& transform);
PointMatrix normalize_joints(const PointMatrix& joints_mm,
                             const NormalizationTransform& transform);

// Full preprocessing path: OBB-normalize, subsample to `target_points`,
// estimate normals, and normalize the optional ground-truth joints.
PointFrame make_point_frame(const PointMatrix& camera_points_mm,
                            const std::optional<PointMatrix>& gt_joints_mm,
                            std::int64_t target_points, std::uint64_t seed,
                            int normal_neighbors = 30);

}  // namespace handfold
