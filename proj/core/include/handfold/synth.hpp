#pragma once

#include <cstdint>
#include <vector>

#include "handfold/preprocess.hpp"
#include "handfold/skeleton.hpp"

namespace handfold {

// Procedural articulated hand: capsules per finger segment around a palm
// ellipsoid, posed by random joint angles within anatomical limits,
// surface-sampled and passed through the real preprocessing path.
struct SynthOptions {
  int joints = 16;                    // 16 (ICVL), 21 (MSRA) or 14 (NYU)
  std::int64_t points = 1024;         // frame size after subsampling
  std::int64_t surface_samples = 2560;
  int normal_neighbors = 30;
};

PointFrame synth_hand(std::uint64_t seed, const SynthOptions& opt = {});
std::vector<PointFrame> synth_hands(int count, std::uint64_t seed,
                                    const SynthOptions& opt = {});

// The raw posed hand before preprocessing; used by the dataset exporter.
struct RawHand {
  PointMatrix surface_mm;  // camera-space surface samples
  PointMatrix joints_mm;   // camera-space ground truth joints
};
RawHand synth_hand_raw(std::uint64_t seed, const SynthOptions& opt = {});

}  // namespace handfold
