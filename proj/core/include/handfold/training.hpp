#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "handfold/checkpoint.hpp"
#include "handfold/loss.hpp"
#include "handfold/metrics.hpp"

namespace handfold {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch = 32;
  int epochs = 100;
  double lr_decay_factor = 1.0;  // multiplied into lr once, at lr_decay_epoch
  int lr_decay_epoch = -1;       // -1 disables the decay
  std::uint64_t seed = 1;
  int checkpoint_every = 10;
  bool augment = true;
  int workers = 1;  // batch-preparation worker pool; determinism mode forces 1
  double loss_delta = 0.01;
  ModelConfig model;

  void validate() const {
    if (!(lr > 0)) throw DimensionError("train config: lr must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw DimensionError("train config: betas must lie in [0, 1)");
    }
    if (batch < 1) throw DimensionError("train config: batch must be >= 1");
    if (epochs < 1) throw DimensionError("train config: epochs must be >= 1");
    if (workers < 1) throw DimensionError("train config: workers must be >= 1");
    model.validate();
  }
};

struct EpochLog {
  int epoch = 0;
  double loss_total = 0;               // batch-averaged joint loss
  std::vector<double> loss_stages;     // per folding stage
  double train_error_mm = 0;           // final-stage mm error on train data
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::string final_checkpoint;
  std::string best_checkpoint;
  std::string log_file;
};

// Mini-batch training with per-epoch reshuffling, online augmentation, joint
// loss over all folding stages and Adam updates. Deterministic for a fixed
// seed: every RNG stream is derived from (seed, epoch, frame index), so the
// result does not depend on worker scheduling. A non-finite loss aborts with
// the last periodic checkpoint left on disk.
TrainResult train(const std::vector<PointFrame>& dataset, const TrainConfig& cfg,
                  const std::string& out_dir,
                  const std::string* resume_checkpoint = nullptr,
                  const SkeletonPrior* skeleton_override = nullptr);

// Eval-mode metrics over a frame set (camera-space mm after denormalization).
struct EvalResult {
  double mean_error_mm = 0;
  std::vector<double> per_frame_mm;
  std::vector<double> per_joint_mm;
};
EvalResult evaluate(HandFoldingNet<float>& model, const std::vector<PointFrame>& frames,
                    int batch = 32);

}  // namespace handfold
