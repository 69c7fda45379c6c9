#include "handfold/model.hpp"

namespace handfold {

std::int64_t count_params(const ModelConfig& cfg) {
  // Build the real model against a placeholder skeleton so the count always
  // reflects the actual wiring, not a formula that can drift from it.
  SkeletonPrior skel;
  skel.coords2d.resize(cfg.joints, 2);
  skel.coords2d.setZero();
  for (int i = 0; i < cfg.joints; ++i) skel.joint_names.push_back("j" + std::to_string(i));
  AdjacencyMap adj;
  adj.adj1.assign(static_cast<std::size_t>(cfg.joints), 0);
  adj.adj2.assign(static_cast<std::size_t>(cfg.joints), 0);
  HandFoldingNet<float> model(cfg, skel, adj, /*init_seed=*/0);
  return model.params().total_count();
}

namespace {

struct FlopCounter {
  bool mac2 = false;
  std::int64_t total = 0;

  void linear(std::int64_t rows, std::int64_t cin, std::int64_t cout) {
    total += rows * cin * cout * (mac2 ? 2 : 1);
  }
  void bn_relu(std::int64_t rows, std::int64_t c) { total += 3 * rows * c; }
  void max_pool(std::int64_t regions, std::int64_t s, std::int64_t c) {
    total += regions * (s - 1) * c;
  }
  // full hidden block: linear + batch norm + relu
  void dense(std::int64_t rows, std::int64_t cin, std::int64_t cout) {
    linear(rows, cin, cout);
    bn_relu(rows, cout);
  }
};

}  // namespace

std::int64_t count_flops(const ModelConfig& cfg, bool mac_counts_two) {
  cfg.validate();
  FlopCounter f;
  f.mac2 = mac_counts_two;
  const std::int64_t j = cfg.joints;

  // Set abstraction levels (Table-style channel schedule).
  struct Level {
    std::int64_t k, s, c_in, c1, c2, c3;
  };
  const Level sa1{512, 64, 3, 32, 32, 128};
  const Level sa2{128, 64, 128, 64, 64, 256};
  for (const Level& l : {sa1, sa2}) {
    const std::int64_t rows = l.k * l.s;
    f.dense(rows, 3 + l.c_in, l.c1);
    f.dense(rows, l.c1, l.c2);
    f.dense(rows, l.c2, l.c3);
    f.max_pool(l.k, l.s, l.c3);
  }
  // Global level: whole 128-row level-2 output, no sampling.
  f.dense(128, 3 + 256, 128);
  f.dense(128, 128, 128);
  f.dense(128, 128, 512);
  f.max_pool(1, 128, 512);

  // Global fold.
  f.dense(j, 2 + 512, 256);
  f.dense(j, 256, 256);
  f.linear(j, 256, 3);

  // Local folds.
  const std::int64_t cf = 256;
  const std::int64_t dep_w = cfg.spatial_dependency ? 3 * cf : cf;
  const std::int64_t cl = cfg.level_channels();
  for (int k = 0; k < cfg.local_folds; ++k) {
    if (cfg.local_feature) {
      const std::int64_t rows = j * 64;
      f.dense(rows, 3 + cl + dep_w, cf);
      f.dense(rows, cf, cf);
      f.dense(rows, cf, cf);
      f.max_pool(j, 64, cf);
    } else {
      // Without grouped features the rows are identical across S; the
      // executed graph collapses to one row per joint.
      f.dense(j, dep_w, cf);
      f.dense(j, cf, cf);
      f.dense(j, cf, cf);
    }
    f.dense(j, cf, cf);
    f.dense(j, cf, cf);
    f.linear(j, cf, 3);
  }
  return f.total;
}

}  // namespace handfold
