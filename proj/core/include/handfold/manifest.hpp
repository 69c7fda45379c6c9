#pragma once

#include <string>
#include <vector>

#include "handfold/preprocess.hpp"

namespace handfold {

// Dataset manifest: an intrinsics record, the joint count, and one line per
// sample "depth_file x1 y1 z1 ... xJ yJ zJ" with camera-space mm joints.
// Depth paths are resolved against the manifest's directory.
struct DatasetManifest {
  std::string root;
  CameraIntrinsics intrinsics;
  int joints = 0;

  struct Sample {
    std::string depth_file;  // resolved path
    PointMatrix gt_mm;       // J x 3
  };
  std::vector<Sample> samples;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const CameraIntrinsics& intrinsics, int joints,
                   const std::vector<std::pair<std::string, PointMatrix>>& samples);

// Loads and preprocesses every referenced depth image into PointFrames.
std::vector<PointFrame> load_frames(const DatasetManifest& manifest, std::int64_t points,
                                    double min_depth_mm, double max_depth_mm,
                                    std::uint64_t seed);

}  // namespace handfold
