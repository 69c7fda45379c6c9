#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "handfold/folding.hpp"
#include "handfold/preprocess.hpp"

namespace handfold {

struct ModelConfig {
  int joints = 16;       // J (16 ICVL, 21 MSRA, 14 NYU)
  int local_folds = 2;   // K
  int points = 1024;     // N input points per frame
  LocalLevel local_level = LocalLevel::l1;
  bool local_feature = true;        // ablation: grouped local features
  bool spatial_dependency = true;   // ablation: rearranged embeddings
  SmoothL1Variant loss_variant = SmoothL1Variant::paper;

  void validate() const {
    if (joints < 1) throw DimensionError("model config: joints must be >= 1");
    if (local_folds < 0) throw DimensionError("model config: local fold count must be >= 0");
    if (points < 1) throw DimensionError("model config: points must be >= 1");
  }

  std::int64_t level_channels() const {
    switch (local_level) {
      case LocalLevel::input: return 3;
      case LocalLevel::l1: return 128;
      case LocalLevel::l2: return 256;
    }
    return 128;
  }
};

// Per-stage joint estimates for one frame, in normalized OBB space.
// Stage 0 is the global fold; stages 1..K are the local folds.
struct PoseEstimate {
  std::vector<PointMatrix> stages;

  const PointMatrix& final_joints() const { return stages.back(); }
  void validate() const {
    if (stages.empty()) throw DimensionError("pose estimate has no stages");
    for (const auto& s : stages) {
      if (!s.allFinite()) throw DimensionError("pose estimate has non-finite coordinates");
    }
  }
};

template <typename R>
class HandFoldingNet {
 public:
  HandFoldingNet(ModelConfig cfg, SkeletonPrior skeleton, AdjacencyMap adjacency,
                 std::uint64_t init_seed)
      : cfg_(cfg), skeleton_(std::move(skeleton)), adjacency_(std::move(adjacency)) {
    cfg_.validate();
    skeleton_.validate();
    adjacency_.validate();
    if (skeleton_.joint_count() != cfg_.joints || adjacency_.joint_count() != cfg_.joints) {
      throw DimensionError("skeleton/adjacency joint count does not match model config");
    }
    std::mt19937_64 rng(init_seed);
    encoder_.init(params_, rng);
    global_fold_.init(params_, 512, rng);
    typename LocalFold<R>::Options opt;
    opt.local_feature = cfg_.local_feature;
    opt.spatial_dependency = cfg_.spatial_dependency;
    opt.level_channels = cfg_.level_channels();
    local_folds_.resize(static_cast<std::size_t>(cfg_.local_folds));
    for (int k = 0; k < cfg_.local_folds; ++k) {
      local_folds_[static_cast<std::size_t>(k)].init(params_, "lf" + std::to_string(k + 1),
                                                     opt, rng);
    }
    skel_cast_ = skeleton_as<R>();
  }

  HandFoldingNet(const HandFoldingNet&) = delete;
  HandFoldingNet& operator=(const HandFoldingNet&) = delete;

  struct Forward {
    std::vector<Tensor<R>> stage_joints;  // K+1 tensors, each [B*J, 3]
    std::vector<Tensor<R>> embeddings;    // K+1 tensors, each [B*J, 256]
    std::int64_t batch = 0;
  };

  // Batched forward. Frames are concatenated row-wise; all per-frame index
  // structures carry frame offsets so batch normalization sees the whole
  // batch. `seed` drives centroid sampling only.
  Forward forward(Graph<R>& g, std::span<const PointFrame> frames, Mode mode,
                  std::uint64_t seed) {
    if (frames.empty()) throw EmptyFrameError("model forward on empty batch");
    const std::int64_t b = static_cast<std::int64_t>(frames.size());
    const std::int64_t n = cfg_.points;
    const std::int64_t j = cfg_.joints;
    for (const auto& f : frames) {
      if (f.size() != n || f.normals.rows() != n) {
        throw DimensionError("frame has " + std::to_string(f.size()) + " points, model expects " +
                             std::to_string(n));
      }
    }
    params_.attach_all(g);

    Tensor<R> pts = Tensor<R>::zeros({b * n, 3});
    Tensor<R> nrm = Tensor<R>::zeros({b * n, 3});
    for (std::int64_t f = 0; f < b; ++f) {
      for (std::int64_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
          pts[(f * n + i) * 3 + c] = static_cast<R>(frames[static_cast<std::size_t>(f)].points(i, c));
          nrm[(f * n + i) * 3 + c] = static_cast<R>(frames[static_cast<std::size_t>(f)].normals(i, c));
        }
      }
    }

    auto enc = encoder_.forward(g, pts, nrm, b, n, mode, derive_seed(seed, 0xE0C));

    // Skeleton rows tiled per frame: [B*J, 2].
    Tensor<R> skel_tile = Tensor<R>::zeros({b * j, 2});
    for (std::int64_t f = 0; f < b; ++f)
      for (std::int64_t k = 0; k < j; ++k)
        for (int c = 0; c < 2; ++c)
          skel_tile[(f * j + k) * 2 + c] = skel_cast_[k * 2 + c];

    Forward out;
    out.batch = b;
    auto gf = global_fold_.forward(g, enc.global, skel_tile, j, mode);
    out.stage_joints.push_back(gf.joints);
    out.embeddings.push_back(gf.embedding);

    const LevelOutput<R>& level = cfg_.local_level == LocalLevel::input ? enc.input
                                  : cfg_.local_level == LocalLevel::l1 ? enc.l1
                                                                       : enc.l2;
    for (auto& lf : local_folds_) {
      auto res = lf.forward(g, out.stage_joints.back(), out.embeddings.back(), level,
                            adjacency_, b, mode);
      out.stage_joints.push_back(res.joints);
      out.embeddings.push_back(res.embedding);
    }
    return out;
  }

  // Single-frame convenience: eval-mode pose with all stage outputs.
  PoseEstimate estimate(const PointFrame& frame, std::uint64_t seed) {
    Graph<R> g;
    auto fwd = forward(g, std::span<const PointFrame>(&frame, 1), Mode::eval, seed);
    return to_pose(fwd, 0);
  }

  PoseEstimate to_pose(const Forward& fwd, std::int64_t frame) const {
    PoseEstimate pose;
    const std::int64_t j = cfg_.joints;
    for (const auto& stage : fwd.stage_joints) {
      PointMatrix m(j, 3);
      for (std::int64_t k = 0; k < j; ++k)
        for (int c = 0; c < 3; ++c) m(k, c) = static_cast<double>(stage[(frame * j + k) * 3 + c]);
      pose.stages.push_back(std::move(m));
    }
    pose.validate();
    return pose;
  }

  ParamStore<R>& params() { return params_; }
  const ParamStore<R>& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const SkeletonPrior& skeleton() const { return skeleton_; }
  const AdjacencyMap& adjacency() const { return adjacency_; }

 private:
  template <typename S>
  std::vector<S> skeleton_as() const {
    std::vector<S> out(static_cast<std::size_t>(skeleton_.joint_count()) * 2);
    for (int i = 0; i < skeleton_.joint_count(); ++i) {
      out[static_cast<std::size_t>(i) * 2] = static_cast<S>(skeleton_.coords2d(i, 0));
      out[static_cast<std::size_t>(i) * 2 + 1] = static_cast<S>(skeleton_.coords2d(i, 1));
    }
    return out;
  }

  ModelConfig cfg_;
  SkeletonPrior skeleton_;
  AdjacencyMap adjacency_;
  ParamStore<R> params_;
  Encoder<R> encoder_;
  GlobalFold<R> global_fold_;
  std::vector<LocalFold<R>> local_folds_;
  std::vector<R> skel_cast_;
};

// Exact learnable-scalar count for a configuration (weights, biases, and
// batch-norm gamma/beta; running statistics are not learnable).
std::int64_t count_params(const ModelConfig& cfg);

// Single-frame inference FLOPs under the documented convention: one FLOP per
// multiply-accumulate in linear layers (fused multiply-add counted once,
// matching how point-cloud models conventionally report "FLOPs"), two per
// element for batch norm, one per element for relu, and one comparison per
// max-pool step. Gathers, concatenations and replications count zero.
std::int64_t count_flops(const ModelConfig& cfg, bool mac_counts_two = false);

}  // namespace handfold
