#pragma once

#include <cstdint>

#include "handfold/preprocess.hpp"

namespace handfold {

// Online augmentation in normalized OBB space: rotation about the OBB z
// axis, isotropic scale, and a translation drawn in mm and converted to
// normalized units through the frame's scale. Points and ground-truth
// joints receive the identical map; normals only rotate.
struct AugmentParams {
  double rotation_z_rad = 0;
  double scale = 1;
  Vec3 translation_mm = Vec3::Zero();
};

AugmentParams sample_augment(std::uint64_t seed);
PointFrame apply_augment(const PointFrame& frame, const AugmentParams& params);
PointFrame augment(const PointFrame& frame, std::uint64_t seed);

}  // namespace handfold
