#include "handfold/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "handfold/common.hpp"

namespace handfold {

namespace fs = std::filesystem;

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();

  std::string line;
  bool have_intrinsics = false, have_joints = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string head;
    is >> head;
    if (head == "intrinsics") {
      if (!(is >> m.intrinsics.fx >> m.intrinsics.fy >> m.intrinsics.cx >> m.intrinsics.cy)) {
        throw FormatError("bad intrinsics record at line " + std::to_string(line_no));
      }
      m.intrinsics.validate();
      have_intrinsics = true;
    } else if (head == "joints") {
      if (!(is >> m.joints) || m.joints < 1) {
        throw FormatError("bad joints record at line " + std::to_string(line_no));
      }
      have_joints = true;
    } else {
      if (!have_intrinsics || !have_joints) {
        throw FormatError("manifest must declare intrinsics and joints before samples");
      }
      DatasetManifest::Sample s;
      fs::path depth = fs::path(head);
      if (depth.is_relative()) depth = fs::path(m.root) / depth;
      s.depth_file = depth.string();
      if (!fs::exists(s.depth_file)) {
        throw FormatError("manifest references missing depth file: " + s.depth_file);
      }
      s.gt_mm.resize(m.joints, 3);
      for (int j = 0; j < m.joints; ++j) {
        for (int c = 0; c < 3; ++c) {
          if (!(is >> s.gt_mm(j, c))) {
            throw FormatError("sample line " + std::to_string(line_no) + " needs " +
                              std::to_string(3 * m.joints) + " joint values");
          }
        }
      }
      double extra;
      if (is >> extra) {
        throw FormatError("sample line " + std::to_string(line_no) + " has extra values");
      }
      m.samples.push_back(std::move(s));
    }
  }
  if (!have_intrinsics || !have_joints) {
    throw FormatError("manifest missing intrinsics or joints record: " + path);
  }
  return m;
}

void save_manifest(const std::string& path, const CameraIntrinsics& intrinsics, int joints,
                   const std::vector<std::pair<std::string, PointMatrix>>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest: " + path);
  out.precision(17);
  out << "intrinsics " << intrinsics.fx << ' ' << intrinsics.fy << ' ' << intrinsics.cx << ' '
      << intrinsics.cy << '\n';
  out << "joints " << joints << '\n';
  for (const auto& [file, gt] : samples) {
    out << file;
    for (Eigen::Index j = 0; j < gt.rows(); ++j)
      for (int c = 0; c < 3; ++c) out << ' ' << gt(j, c);
    out << '\n';
  }
}

std::vector<PointFrame> load_frames(const DatasetManifest& manifest, std::int64_t points,
                                    double min_depth_mm, double max_depth_mm,
                                    std::uint64_t seed) {
  std::vector<PointFrame> frames;
  frames.reserve(manifest.samples.size());
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& s = manifest.samples[i];
    DepthImage depth = read_depth(s.depth_file);
    PointMatrix pts = depth_to_points(depth, manifest.intrinsics, min_depth_mm, max_depth_mm);
    frames.push_back(make_point_frame(pts, s.gt_mm, points,
                                      derive_seed(seed, static_cast<std::uint64_t>(i))));
  }
  return frames;
}

}  // namespace handfold
