#include "handfold/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "handfold/common.hpp"

namespace handfold {

std::vector<double> joint_distances(const PointMatrix& pred, const PointMatrix& gt) {
  if (pred.rows() != gt.rows()) {
    throw DimensionError("joint distance: prediction has " + std::to_string(pred.rows()) +
                         " joints, ground truth has " + std::to_string(gt.rows()));
  }
  std::vector<double> out(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index j = 0; j < pred.rows(); ++j) {
    out[static_cast<std::size_t>(j)] = (pred.row(j) - gt.row(j)).norm();
  }
  return out;
}

double mean_distance_error(const PointMatrix& pred, const PointMatrix& gt) {
  auto d = joint_distances(pred, gt);
  double acc = 0;
  for (double v : d) acc += v;
  return acc / static_cast<double>(d.size());
}

std::vector<double> success_rate_curve(const std::vector<double>& frame_errors,
                                       const std::vector<double>& thresholds) {
  if (frame_errors.empty()) throw EmptyFrameError("success rate needs at least one frame");
  if (thresholds.empty()) throw DimensionError("success rate needs a threshold list");
  std::vector<double> rates(thresholds.size());
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::size_t hits = 0;
    for (double e : frame_errors) hits += e < thresholds[t] ? 1 : 0;
    rates[t] = static_cast<double>(hits) / static_cast<double>(frame_errors.size());
  }
  return rates;
}

void write_success_curve_csv(const std::string& path, const std::vector<double>& thresholds,
                             const std::vector<double>& rates) {
  if (thresholds.size() != rates.size()) {
    throw DimensionError("curve CSV: thresholds and rates differ in length");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write curve CSV: " + path);
  out << "threshold_mm,success_rate\n";
  char line[64];
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::snprintf(line, sizeof(line), "%.6g,%.9g\n", thresholds[i], rates[i]);
    out << line;
  }
}

}  // namespace handfold
