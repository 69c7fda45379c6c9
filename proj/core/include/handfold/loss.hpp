#pragma once

#include <cstdint>
#include <vector>

#include "handfold/graph.hpp"
#include "handfold/model.hpp"

namespace handfold {

// Loss over all folding stages plus eval-time per-joint errors.
struct LossReport {
  double total = 0;                   // == sum of per_stage
  std::vector<double> per_stage;      // stage 0 (global fold) .. stage K
  std::vector<double> per_joint_mm;   // eval-time mean distance per joint, mm

  void validate() const;
};

// Elementwise smooth-L1 penalty.
//   paper variant: 0.5|x|        if |x| < delta, else |x| - delta/2
//   huber variant: x^2/(2 delta) if |x| < delta, else |x| - delta/2
double smooth_l1(double x, double delta = 0.01,
                 SmoothL1Variant variant = SmoothL1Variant::paper);

// Joint loss over every stage of a single-frame estimate (normalized space).
LossReport joint_loss(const PoseEstimate& estimate, const PointMatrix& gt_normalized,
                      double delta = 0.01, SmoothL1Variant variant = SmoothL1Variant::paper);

// Graph-attached joint loss over a batched forward: sums the smooth-L1 of
// every stage against the ground truth and averages over the batch.
template <typename R>
struct BatchLoss {
  Tensor<R> total;                 // scalar node
  std::vector<Tensor<R>> stages;   // scalar node per stage (batch-averaged)
};

template <typename R>
BatchLoss<R> joint_loss_graph(Graph<R>& g, const std::vector<Tensor<R>>& stage_joints,
                              const Tensor<R>& gt, std::int64_t batch, R delta,
                              SmoothL1Variant variant) {
  if (stage_joints.empty()) throw DimensionError("joint loss needs at least one stage");
  BatchLoss<R> out;
  const R inv_b = R(1) / static_cast<R>(batch);
  for (const auto& stage : stage_joints) {
    if (stage.shape() != gt.shape()) {
      throw DimensionError("joint loss stage shape " + shape_str(stage.shape()) +
                           " does not match ground truth " + shape_str(gt.shape()));
    }
    auto term = g.scale(g.smooth_l1_sum(g.sub(stage, gt), delta, variant), inv_b);
    out.stages.push_back(term);
    out.total = out.total.defined() ? g.add(out.total, term) : term;
  }
  return out;
}

}  // namespace handfold
