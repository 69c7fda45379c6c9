#include "handfold/preprocess.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "handfold/common.hpp"
#include "handfold/parallel.hpp"

namespace handfold {

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw DimensionError("camera intrinsics require fx > 0, fy > 0");
}

void NormalizationTransform::validate(double tol) const {
  if (!(scale > 0)) throw DegenerateFrameError("normalization scale must be positive");
  Mat3 rrt = rotation * rotation.transpose();
  if ((rrt - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) {
    throw DegenerateFrameError("OBB rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw DegenerateFrameError("OBB rotation is not a proper rotation (det != +1)");
  }
}

void PointFrame::validate(double coord_tol, double normal_tol) const {
  if (points.rows() != normals.rows()) {
    throw DimensionError("point frame has mismatched point/normal counts");
  }
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int c = 0; c < 3; ++c) {
      if (std::abs(points(i, c)) > 0.5 + coord_tol) {
        throw DegenerateFrameError("normalized coordinate outside [-0.5, 0.5]");
      }
    }
    if (std::abs(normals.row(i).norm() - 1.0) > normal_tol) {
      throw DegenerateFrameError("surface normal is not unit length");
    }
  }
  transform.validate();
}

PointMatrix depth_to_points(const DepthImage& depth, const CameraIntrinsics& intr,
                            const std::vector<bool>& mask) {
  intr.validate();
  if (mask.size() != depth.mm.size()) {
    throw DimensionError("foreground mask size does not match depth image");
  }
  std::int64_t count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) throw EmptyFrameError("empty foreground mask: no depth pixels selected");
  PointMatrix pts(count, 3);
  std::int64_t k = 0;
  for (std::uint32_t v = 0; v < depth.height; ++v) {
    for (std::uint32_t u = 0; u < depth.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * depth.width + u;
      if (!mask[i]) continue;
      const double d = static_cast<double>(depth.mm[i]);
      pts(k, 0) = (static_cast<double>(u) - intr.cx) * d / intr.fx;
      pts(k, 1) = (static_cast<double>(v) - intr.cy) * d / intr.fy;
      pts(k, 2) = d;
      ++k;
    }
  }
  return pts;
}

PointMatrix depth_to_points(const DepthImage& depth, const CameraIntrinsics& intr,
                            double min_depth_mm, double max_depth_mm) {
  std::vector<bool> mask(depth.mm.size());
  for (std::size_t i = 0; i < depth.mm.size(); ++i) {
    const double d = static_cast<double>(depth.mm[i]);
    mask[i] = d > 0 && d >= min_depth_mm && d <= max_depth_mm;
  }
  return depth_to_points(depth, intr, mask);
}

Vec3 project_to_pixel(const Vec3& p, const CameraIntrinsics& intr) {
  intr.validate();
  if (!(p.z() > 0)) throw DimensionError("projection requires positive depth");
  return {p.x() * intr.fx / p.z() + intr.cx, p.y() * intr.fy / p.z() + intr.cy, p.z()};
}

ObbResult obb_normalize(const PointMatrix& pts) {
  if (pts.rows() < 3) throw DegenerateFrameError("OBB normalization needs at least 3 points");
  const Mat3 cov = covariance(pts);
  const SymEig3 eig = eigen_sym3(cov);
  if (!(eig.values[0] > 0) || eig.values[1] <= eig.values[0] * 1e-9) {
    throw DegenerateFrameError("degenerate point distribution (rank-deficient covariance)");
  }

  Mat3 rot = eig.vectors;
  // Fix eigenvector sign ambiguity against the camera axes, then restore a
  // right-handed frame by flipping the least-significant axis if needed.
  for (int i = 0; i < 3; ++i) {
    if (rot(i, i) < 0) rot.row(i) = -rot.row(i);
  }
  if (rot.determinant() < 0) rot.row(2) = -rot.row(2);

  // Rotate, centre on the OBB midpoint, scale by the longest side.
  PointMatrix rotated = pts * rot.transpose();
  Vec3 lo = rotated.colwise().minCoeff().transpose();
  Vec3 hi = rotated.colwise().maxCoeff().transpose();
  const Vec3 center = 0.5 * (lo + hi);
  const double scale = (hi - lo).maxCoeff();
  if (!(scale > 0)) throw DegenerateFrameError("zero-extent bounding box");

  ObbResult out;
  out.points = rotated;
  for (Eigen::Index i = 0; i < out.points.rows(); ++i) {
    out.points.row(i) = (out.points.row(i) - center.transpose()) / scale;
  }
  out.transform.rotation = rot;
  out.transform.centroid = rot.transpose() * center;
  out.transform.scale = scale;
  return out;
}

PointMatrix subsample(const PointMatrix& pts, std::int64_t target, std::uint64_t seed) {
  const std::int64_t m = pts.rows();
  if (m < 1) throw EmptyFrameError("subsample on empty point set");
  if (target < 1) throw DimensionError("subsample target must be >= 1");
  std::mt19937_64 rng(seed);
  PointMatrix out(target, 3);
  if (m >= target) {
    // Partial Fisher-Yates: first `target` entries of a random permutation.
    std::vector<std::int64_t> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < target; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, m - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      out.row(i) = pts.row(idx[static_cast<std::size_t>(i)]);
    }
  } else {
    // Keep every input point, pad by sampling with replacement.
    for (std::int64_t i = 0; i < m; ++i) out.row(i) = pts.row(i);
    std::uniform_int_distribution<std::int64_t> pick(0, m - 1);
    for (std::int64_t i = m; i < target; ++i) out.row(i) = pts.row(pick(rng));
  }
  return out;
}

PointMatrix surface_normals(const PointMatrix& pts, int k) {
  const std::int64_t n = pts.rows();
  if (n <= k) throw DimensionError("surface_normals requires more points than neighbors");
  PointMatrix normals(n, 3);
  parallel_chunks(n, [&](std::int64_t i0, std::int64_t i1, int) {
    std::vector<std::pair<double, std::int64_t>> dist(static_cast<std::size_t>(n));
    for (std::int64_t i = i0; i < i1; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        dist[static_cast<std::size_t>(j)] = {(pts.row(j) - pts.row(i)).squaredNorm(), j};
      }
      std::nth_element(dist.begin(), dist.begin() + k - 1, dist.end());
      PointMatrix nb(k, 3);
      for (int j = 0; j < k; ++j) nb.row(j) = pts.row(dist[static_cast<std::size_t>(j)].second);
      const SymEig3 eig = eigen_sym3(covariance(nb));
      Vec3 normal = eig.vectors.row(2).transpose();  // smallest-variance direction
      const double len = normal.norm();
      normal = len > 0 ? Vec3(normal / len) : Vec3(0, 0, -1);
      // Orient toward the camera side: the OBB +z axis points away from the
      // camera, so a camera-facing normal has a non-positive z component.
      if (normal.z() > 0) normal = -normal;
      normals.row(i) = normal.transpose();
    }
  });
  return normals;
}

PointMatrix denormalize_joints(const PointMatrix& joints, const NormalizationTransform& t) {
  t.validate();
  PointMatrix out(joints.rows(), 3);
  for (Eigen::Index i = 0; i < joints.rows(); ++i) {
    out.row(i) = t.denormalize(joints.row(i).transpose()).transpose();
  }
  return out;
}

PointMatrix normalize_joints(const PointMatrix& joints, const NormalizationTransform& t) {
  t.validate();
  PointMatrix out(joints.rows(), 3);
  for (Eigen::Index i = 0; i < joints.rows(); ++i) {
    out.row(i) = t.normalize(joints.row(i).transpose()).transpose();
  }
  return out;
}

PointFrame make_point_frame(const PointMatrix& camera_points_mm,
                            const std::optional<PointMatrix>& gt_joints_mm,
                            std::int64_t target_points, std::uint64_t seed,
                            int normal_neighbors) {
  ObbResult obb = obb_normalize(camera_points_mm);
  PointFrame frame;
  frame.transform = obb.transform;
  frame.points = subsample(obb.points, target_points, seed);
  frame.normals = surface_normals(frame.points, normal_neighbors);
  if (gt_joints_mm) frame.gt_joints = normalize_joints(*gt_joints_mm, frame.transform);
  return frame;
}

}  // namespace handfold
