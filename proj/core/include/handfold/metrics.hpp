#pragma once

#include <string>
#include <vector>

#include "handfold/geometry.hpp"

namespace handfold {

// Mean Euclidean distance over joints, in whatever unit the inputs carry
// (mm for camera-space evaluation).
double mean_distance_error(const PointMatrix& pred, const PointMatrix& gt);

// Per-joint Euclidean distances (one value per joint).
std::vector<double> joint_distances(const PointMatrix& pred, const PointMatrix& gt);

// Fraction of frames whose mean distance error is below each threshold.
// Monotone non-decreasing, bounded in [0, 1].
std::vector<double> success_rate_curve(const std::vector<double>& frame_errors_mm,
                                       const std::vector<double>& thresholds_mm);

// CSV with a "threshold_mm,success_rate" header and one row per threshold.
void write_success_curve_csv(const std::string& path, const std::vector<double>& thresholds_mm,
                             const std::vector<double>& rates);

}  // namespace handfold
