#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "handfold/geometry.hpp"
#include "handfold/preprocess.hpp"

namespace handfold {

// Joint connectivity of one dataset convention. Finger joints are listed
// root-side first; the root (palm or wrist) joint is not part of any finger.
struct KinematicChain {
  struct Finger {
    std::string name;
    std::vector<int> joints;
    bool thumb = false;
    bool wrist = false;  // NYU carries two wrist joints modeled as stub chains
  };

  int root = 0;
  std::vector<Finger> fingers;
  std::vector<std::string> joint_names;

  int joint_count() const { return static_cast<int>(joint_names.size()); }
  void validate() const;

  static KinematicChain icvl();  // J = 16
  static KinematicChain msra();  // J = 21
  static KinematicChain nyu();   // J = 14
  static KinematicChain for_joint_count(int j);
};

// Fixed 2D skeleton folded by the decoder.
struct SkeletonPrior {
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> coords2d;  // J x 2
  std::vector<std::string> joint_names;

  int joint_count() const { return static_cast<int>(coords2d.rows()); }
  void validate() const;
};

// Two mapped neighbours per joint; fingertips map to themselves in place of
// the missing successor.
struct AdjacencyMap {
  std::vector<int> adj1;
  std::vector<int> adj2;

  int joint_count() const { return static_cast<int>(adj1.size()); }
  void validate() const;
};

// Skeleton construction: average adjacent-link lengths over (up to
// `max_samples` of) the training ground truths, then unfold each finger as a
// straight ray from the root. Fingers share a 90-degree fan; the thumb ray is
// pushed 30 degrees further out, wrist stubs point downward.
SkeletonPrior build_skeleton(const std::vector<PointMatrix>& gt_joint_sets,
                             const KinematicChain& chain, std::uint64_t seed = 0,
                             std::size_t max_samples = 1000);

AdjacencyMap build_adjacency(const KinematicChain& chain);

// Text persistence: skeleton lines are "name x y", adjacency lines are
// "name adj1 adj2" (indices), one joint per line in joint order.
void save_skeleton(const std::string& path, const SkeletonPrior& s);
SkeletonPrior load_skeleton(const std::string& path);
void save_adjacency(const std::string& path, const AdjacencyMap& a,
                    const std::vector<std::string>& joint_names);
AdjacencyMap load_adjacency(const std::string& path);

}  // namespace handfold
