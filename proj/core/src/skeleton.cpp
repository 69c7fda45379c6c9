#include "handfold/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "handfold/common.hpp"

namespace handfold {

namespace {

constexpr double kPi = 3.14159265358979323846;

KinematicChain make_chain(int root, std::vector<KinematicChain::Finger> fingers,
                          std::vector<std::string> names) {
  KinematicChain c;
  c.root = root;
  c.fingers = std::move(fingers);
  c.joint_names = std::move(names);
  c.validate();
  return c;
}

}  // namespace

void KinematicChain::validate() const {
  const int j = joint_count();
  std::vector<int> seen(static_cast<std::size_t>(j), 0);
  if (root < 0 || root >= j) throw DimensionError("kinematic chain root out of range");
  seen[static_cast<std::size_t>(root)] = 1;
  for (const auto& f : fingers) {
    if (f.joints.empty()) throw DimensionError("kinematic chain finger without joints");
    for (int idx : f.joints) {
      if (idx < 0 || idx >= j) throw DimensionError("kinematic chain joint index out of range");
      if (seen[static_cast<std::size_t>(idx)]++) {
        throw DimensionError("kinematic chain joint listed twice");
      }
    }
  }
  for (int i = 0; i < j; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) {
      throw DimensionError("kinematic chain does not cover joint " + std::to_string(i));
    }
  }
}

KinematicChain KinematicChain::icvl() {
  return make_chain(
      0,
      {{"thumb", {1, 2, 3}, true, false},
       {"index", {4, 5, 6}, false, false},
       {"middle", {7, 8, 9}, false, false},
       {"ring", {10, 11, 12}, false, false},
       {"pinky", {13, 14, 15}, false, false}},
      {"palm", "thumb_r1", "thumb_r2", "thumb_tip", "index_r", "index_m", "index_tip",
       "middle_r", "middle_m", "middle_tip", "ring_r", "ring_m", "ring_tip", "pinky_r",
       "pinky_m", "pinky_tip"});
}

KinematicChain KinematicChain::msra() {
  return make_chain(
      0,
      {{"index", {1, 2, 3, 4}, false, false},
       {"middle", {5, 6, 7, 8}, false, false},
       {"ring", {9, 10, 11, 12}, false, false},
       {"little", {13, 14, 15, 16}, false, false},
       {"thumb", {17, 18, 19, 20}, true, false}},
      {"wrist", "index_mcp", "index_pip", "index_dip", "index_tip", "middle_mcp",
       "middle_pip", "middle_dip", "middle_tip", "ring_mcp", "ring_pip", "ring_dip",
       "ring_tip", "little_mcp", "little_pip", "little_dip", "little_tip", "thumb_mcp",
       "thumb_pip", "thumb_dip", "thumb_tip"});
}

KinematicChain KinematicChain::nyu() {
  return make_chain(
      13,
      {{"thumb", {10, 9, 8}, true, false},
       {"index", {7, 6}, false, false},
       {"middle", {5, 4}, false, false},
       {"ring", {3, 2}, false, false},
       {"pinky", {1, 0}, false, false},
       {"wrist_a", {11}, false, true},
       {"wrist_b", {12}, false, true}},
      {"pinky_tip", "pinky_mid", "ring_tip", "ring_mid", "middle_tip", "middle_mid",
       "index_tip", "index_mid", "thumb_tip", "thumb_mid", "thumb_root", "wrist_a",
       "wrist_b", "palm"});
}

KinematicChain KinematicChain::for_joint_count(int j) {
  switch (j) {
    case 16: return icvl();
    case 21: return msra();
    case 14: return nyu();
    default:
      throw DimensionError("no built-in kinematic chain for J=" + std::to_string(j) +
                           " (supported: 16, 21, 14)");
  }
}

void SkeletonPrior::validate() const {
  if (coords2d.rows() != static_cast<Eigen::Index>(joint_names.size())) {
    throw DimensionError("skeleton name/coordinate count mismatch");
  }
  if (!coords2d.allFinite()) throw DimensionError("skeleton contains non-finite coordinates");
}

void AdjacencyMap::validate() const {
  if (adj1.size() != adj2.size()) throw DimensionError("adjacency arrays differ in length");
  const int j = joint_count();
  for (int i = 0; i < j; ++i) {
    if (adj1[static_cast<std::size_t>(i)] < 0 || adj1[static_cast<std::size_t>(i)] >= j ||
        adj2[static_cast<std::size_t>(i)] < 0 || adj2[static_cast<std::size_t>(i)] >= j) {
      throw DimensionError("adjacency index out of range");
    }
  }
}

SkeletonPrior build_skeleton(const std::vector<PointMatrix>& gt_joint_sets,
                             const KinematicChain& chain, std::uint64_t seed,
                             std::size_t max_samples) {
  if (gt_joint_sets.empty()) throw EmptyFrameError("skeleton build needs training samples");
  const int j = chain.joint_count();
  for (const auto& gt : gt_joint_sets) {
    if (gt.rows() != j) {
      throw DimensionError("skeleton sample has " + std::to_string(gt.rows()) +
                           " joints, chain expects " + std::to_string(j));
    }
  }

  // Step 1: pick up to max_samples ground truths, seed-fixed.
  std::vector<std::size_t> order(gt_joint_sets.size());
  std::iota(order.begin(), order.end(), 0);
  if (order.size() > max_samples) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(max_samples);
  }

  // Step 2: average the length of every link between adjacent joints.
  auto mean_link = [&](int a, int b) {
    double acc = 0;
    for (std::size_t s : order) {
      acc += (gt_joint_sets[s].row(a) - gt_joint_sets[s].row(b)).norm();
    }
    return acc / static_cast<double>(order.size());
  };

  // Steps 3-4: unfold each finger as a straight ray from the root and collect
  // the 2D joint positions.
  SkeletonPrior out;
  out.coords2d.resize(j, 2);
  out.coords2d.setZero();
  out.joint_names = chain.joint_names;
  out.coords2d.row(chain.root).setZero();

  int spread_count = 0;
  for (const auto& f : chain.fingers) spread_count += f.wrist ? 0 : 1;
  int spread_pos = 0;
  int wrist_pos = 0;
  for (const auto& f : chain.fingers) {
    double angle;
    if (f.wrist) {
      angle = -kPi / 2 + (wrist_pos % 2 == 0 ? 1 : -1) * (kPi / 12.0);
      ++wrist_pos;
    } else {
      // Equally spaced rays across a 90-degree fan, 135 deg down to 45 deg.
      angle = spread_count > 1
                  ? (3.0 * kPi / 4.0) - (kPi / 2.0) * spread_pos / (spread_count - 1)
                  : kPi / 2.0;
      if (f.thumb) angle += kPi / 6.0;
      ++spread_pos;
    }
    const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
    double reach = 0;
    int prev = chain.root;
    for (int joint : f.joints) {
      reach += mean_link(prev, joint);
      out.coords2d.row(joint) = (reach * dir).transpose();
      prev = joint;
    }
  }
  out.validate();
  return out;
}

AdjacencyMap build_adjacency(const KinematicChain& chain) {
  chain.validate();
  const int j = chain.joint_count();
  AdjacencyMap map;
  map.adj1.assign(static_cast<std::size_t>(j), -1);
  map.adj2.assign(static_cast<std::size_t>(j), -1);
  for (const auto& f : chain.fingers) {
    for (std::size_t i = 0; i < f.joints.size(); ++i) {
      const int joint = f.joints[i];
      const int pred = i == 0 ? chain.root : f.joints[i - 1];
      const int succ = i + 1 < f.joints.size() ? f.joints[i + 1] : joint;  // tip self-maps
      map.adj1[static_cast<std::size_t>(joint)] = pred;
      map.adj2[static_cast<std::size_t>(joint)] = succ;
    }
  }
  // The root maps to the thumb root and the first non-thumb finger root.
  int thumb_root = -1, index_root = -1;
  for (const auto& f : chain.fingers) {
    if (f.thumb && thumb_root < 0) thumb_root = f.joints.front();
    if (!f.thumb && !f.wrist && index_root < 0) index_root = f.joints.front();
  }
  map.adj1[static_cast<std::size_t>(chain.root)] =
      thumb_root >= 0 ? thumb_root : chain.root;
  map.adj2[static_cast<std::size_t>(chain.root)] =
      index_root >= 0 ? index_root : chain.root;
  map.validate();
  return map;
}

void save_skeleton(const std::string& path, const SkeletonPrior& s) {
  s.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write skeleton file: " + path);
  out.precision(17);
  for (int i = 0; i < s.joint_count(); ++i) {
    out << s.joint_names[static_cast<std::size_t>(i)] << ' ' << s.coords2d(i, 0) << ' '
        << s.coords2d(i, 1) << '\n';
  }
}

SkeletonPrior load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open skeleton file: " + path);
  SkeletonPrior s;
  std::vector<Eigen::Vector2d> coords;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name;
    double x, y;
    if (!(is >> name >> x >> y)) throw FormatError("bad skeleton line: " + line);
    s.joint_names.push_back(name);
    coords.emplace_back(x, y);
  }
  if (coords.empty()) throw FormatError("skeleton file is empty: " + path);
  s.coords2d.resize(static_cast<Eigen::Index>(coords.size()), 2);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    s.coords2d.row(static_cast<Eigen::Index>(i)) = coords[i].transpose();
  }
  s.validate();
  return s;
}

void save_adjacency(const std::string& path, const AdjacencyMap& a,
                    const std::vector<std::string>& joint_names) {
  a.validate();
  if (joint_names.size() != static_cast<std::size_t>(a.joint_count())) {
    throw DimensionError("adjacency/name count mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write adjacency file: " + path);
  for (int i = 0; i < a.joint_count(); ++i) {
    out << joint_names[static_cast<std::size_t>(i)] << ' ' << a.adj1[static_cast<std::size_t>(i)]
        << ' ' << a.adj2[static_cast<std::size_t>(i)] << '\n';
  }
}

AdjacencyMap load_adjacency(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open adjacency file: " + path);
  AdjacencyMap a;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name;
    int x, y;
    if (!(is >> name >> x >> y)) throw FormatError("bad adjacency line: " + line);
    a.adj1.push_back(x);
    a.adj2.push_back(y);
  }
  if (a.adj1.empty()) throw FormatError("adjacency file is empty: " + path);
  a.validate();
  return a;
}

}  // namespace handfold
