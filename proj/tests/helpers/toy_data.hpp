#pragma once

// Small synthetic frames for model-level tests: a random blob pushed through
// the real preprocessing path so every PointFrame invariant holds.

#include <random>

#include "handfold/preprocess.hpp"
#include "handfold/skeleton.hpp"

namespace toy {

inline handfold::PointFrame blob_frame(std::uint64_t seed, std::int64_t points = 1024,
                                       int joints = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  handfold::PointMatrix cloud(2048, 3);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    cloud.row(i) << u(rng) * 80, u(rng) * 50, 400 + u(rng) * 30;
  }
  handfold::PointMatrix gt(joints, 3);
  for (int i = 0; i < joints; ++i) {
    gt.row(i) << u(rng) * 60, u(rng) * 40, 400 + u(rng) * 25;
  }
  return handfold::make_point_frame(cloud, gt, points, seed + 17);
}

inline handfold::SkeletonPrior flat_skeleton(int joints) {
  handfold::SkeletonPrior s;
  s.coords2d.resize(joints, 2);
  for (int i = 0; i < joints; ++i) {
    s.coords2d(i, 0) = 0.05 * i;
    s.coords2d(i, 1) = 0.02 * (i % 4);
    s.joint_names.push_back("j" + std::to_string(i));
  }
  return s;
}

inline handfold::AdjacencyMap ring_adjacency(int joints) {
  handfold::AdjacencyMap a;
  for (int i = 0; i < joints; ++i) {
    a.adj1.push_back((i + joints - 1) % joints);
    a.adj2.push_back((i + 1) % joints);
  }
  return a;
}

}  // namespace toy
