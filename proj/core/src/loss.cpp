#include "handfold/loss.hpp"

#include <cmath>

namespace handfold {

void LossReport::validate() const {
  double acc = 0;
  for (double s : per_stage) {
    if (s < 0) throw DimensionError("negative per-stage loss");
    acc += s;
  }
  if (std::abs(acc - total) > 1e-9 * std::max(1.0, std::abs(total))) {
    throw DimensionError("loss report total does not equal the stage sum");
  }
}

double smooth_l1(double x, double delta, SmoothL1Variant variant) {
  const double a = std::abs(x);
  if (a < delta) {
    return variant == SmoothL1Variant::paper ? 0.5 * a : x * x / (2.0 * delta);
  }
  return a - delta / 2.0;
}

LossReport joint_loss(const PoseEstimate& estimate, const PointMatrix& gt, double delta,
                      SmoothL1Variant variant) {
  estimate.validate();
  if (estimate.stages.empty()) throw DimensionError("pose estimate has no stages");
  LossReport report;
  for (const auto& stage : estimate.stages) {
    if (stage.rows() != gt.rows()) {
      throw DimensionError("joint loss: estimate has " + std::to_string(stage.rows()) +
                           " joints, ground truth has " + std::to_string(gt.rows()));
    }
    double acc = 0;
    for (Eigen::Index j = 0; j < stage.rows(); ++j) {
      for (int c = 0; c < 3; ++c) acc += smooth_l1(stage(j, c) - gt(j, c), delta, variant);
    }
    report.per_stage.push_back(acc);
    report.total += acc;
  }
  report.validate();
  return report;
}

}  // namespace handfold
