#pragma once

#include <cstdint>
#include <vector>

#include "handfold/encoder.hpp"
#include "handfold/skeleton.hpp"

namespace handfold {

// Which set-abstraction level feeds the local folding blocks.
enum class LocalLevel { input, l1, l2 };

inline const char* local_level_name(LocalLevel l) {
  switch (l) {
    case LocalLevel::input: return "input";
    case LocalLevel::l1: return "1";
    case LocalLevel::l2: return "2";
  }
  return "?";
}

// Spatial dependency map: row j = [e_j, e_adj1(j), e_adj2(j)].
// emb: [B*J, Cf]. Pure gather + concat; width triples.
template <typename R>
Tensor<R> rearrange(Graph<R>& g, const Tensor<R>& emb, const AdjacencyMap& adj,
                    std::int64_t batch) {
  adj.validate();
  const std::int64_t j = adj.joint_count();
  if (emb.rank() != 2 || emb.extent(0) != batch * j) {
    throw DimensionError("rearrange: embedding shape " + shape_str(emb.shape()) +
                         " does not match batch " + std::to_string(batch) + " x J " +
                         std::to_string(j));
  }
  std::vector<std::int32_t> i1(static_cast<std::size_t>(batch * j)),
      i2(static_cast<std::size_t>(batch * j));
  for (std::int64_t f = 0; f < batch; ++f) {
    for (std::int64_t k = 0; k < j; ++k) {
      i1[static_cast<std::size_t>(f * j + k)] =
          static_cast<std::int32_t>(f * j + adj.adj1[static_cast<std::size_t>(k)]);
      i2[static_cast<std::size_t>(f * j + k)] =
          static_cast<std::int32_t>(f * j + adj.adj2[static_cast<std::size_t>(k)]);
    }
  }
  return g.concat_last({emb, g.gather_rows(emb, IndexTensor::from(std::move(i1))),
                        g.gather_rows(emb, IndexTensor::from(std::move(i2)))});
}

// Global-feature guided folding decoder: folds the 2D skeleton into the
// initial joint estimate and produces the per-joint folding embeddings.
template <typename R>
class GlobalFold {
 public:
  static constexpr std::int64_t kEmbedding = 256;

  void init(ParamStore<R>& store, std::int64_t global_channels, std::mt19937_64& rng) {
    e1_.init(store, "gf.e1", 2 + global_channels, kEmbedding, rng);
    e2_.init(store, "gf.e2", kEmbedding, kEmbedding, rng);
    out_.init(store, "gf.out", kEmbedding, 3, rng);
  }

  struct Result {
    Tensor<R> joints;     // [B*J, 3]
    Tensor<R> embedding;  // [B*J, Cf]
  };

  // global_feat: [B, Cg]; skel_tile: [B*J, 2] (skeleton repeated per frame).
  Result forward(Graph<R>& g, const Tensor<R>& global_feat, const Tensor<R>& skel_tile,
                 std::int64_t joints, Mode mode) {
    const std::int64_t batch = global_feat.extent(0);
    auto rep = g.reshape(g.replicate(global_feat, joints),
                         {batch * joints, global_feat.channels()});
    auto x = g.concat_last({skel_tile, rep});
    Result r;
    r.embedding = e2_.forward(g, e1_.forward(g, x, mode), mode);
    r.joints = out_.forward(g, r.embedding);
    return r;
  }

 private:
  detail_model::DenseBnRelu<R> e1_, e2_;
  detail_model::DenseLinear<R> out_;
};

// Joint-wise local-feature guided folding block (residual refinement).
template <typename R>
class LocalFold {
 public:
  static constexpr std::int64_t kEmbedding = 256;
  static constexpr double kRadius = 0.4;
  static constexpr int kNeighbors = 64;

  struct Options {
    bool local_feature = true;       // group [p - j, f] around each joint
    bool spatial_dependency = true;  // append the two rearranged embeddings
    std::int64_t level_channels = 128;
  };

  void init(ParamStore<R>& store, const std::string& name, const Options& opt,
            std::mt19937_64& rng) {
    opt_ = opt;
    const std::int64_t grouped_w = 3 + opt.level_channels;
    const std::int64_t dep_w = opt.spatial_dependency ? 3 * kEmbedding : kEmbedding;
    const std::int64_t fan_in = (opt.local_feature ? grouped_w : 0) + dep_w;
    if (opt.local_feature) {
      wg_ = store.add(name + ".f1.wg", uniform_init<R>({grouped_w, kEmbedding}, fan_in, rng));
    }
    wd_ = store.add(name + ".f1.wd", uniform_init<R>({dep_w, kEmbedding}, fan_in, rng));
    b1_ = store.add(name + ".f1.b", uniform_init<R>({kEmbedding}, fan_in, rng));
    gamma1_ = store.add(name + ".f1.gamma", Tensor<R>::full({kEmbedding}, R(1)));
    beta1_ = store.add(name + ".f1.beta", Tensor<R>::zeros({kEmbedding}));
    stats1_ = RunningStats<R>::make(kEmbedding);
    store.add_buffer(name + ".f1.running_mean", stats1_.mean);
    store.add_buffer(name + ".f1.running_var", stats1_.var);
    f2_.init(store, name + ".f2", kEmbedding, kEmbedding, rng);
    f3_.init(store, name + ".f3", kEmbedding, kEmbedding, rng);
    r1_.init(store, name + ".r1", kEmbedding, kEmbedding, rng);
    r2_.init(store, name + ".r2", kEmbedding, kEmbedding, rng);
    r3_.init(store, name + ".r3", kEmbedding, 3, rng);
  }

  struct Result {
    Tensor<R> joints;     // [B*J, 3]
    Tensor<R> embedding;  // [B*J, Cf]
  };

  // prev joints/embedding: [B*J, 3], [B*J, Cf]; level: grouping source.
  Result forward(Graph<R>& g, const Tensor<R>& prev_joints, const Tensor<R>& prev_embedding,
                 const LevelOutput<R>& level, const AdjacencyMap& adj, std::int64_t batch,
                 Mode mode) {
    const std::int64_t j = adj.joint_count();
    auto dep = opt_.spatial_dependency ? rearrange(g, prev_embedding, adj, batch)
                                       : prev_embedding;

    Tensor<R> z;
    if (opt_.local_feature) {
      if (!level.coords.defined() || level.coords.extent(0) < 1) {
        throw EmptyFrameError("local fold: empty level map");
      }
      // Joint coordinates act as ball-query centroids over the level map.
      auto coords = level.coords.values();
      auto joints_raw = prev_joints.values();
      std::vector<std::int32_t> nbr(static_cast<std::size_t>(batch * j * kNeighbors));
      for (std::int64_t f = 0; f < batch; ++f) {
        auto frame_points =
            coords.subspan(static_cast<std::size_t>(f * level.per_frame * 3),
                           static_cast<std::size_t>(level.per_frame * 3));
        auto frame_centroids = joints_raw.subspan(static_cast<std::size_t>(f * j * 3),
                                                  static_cast<std::size_t>(j * 3));
        IndexTensor local = ball_query<R>(frame_points, level.per_frame, frame_centroids, j,
                                          kRadius, kNeighbors);
        for (std::int64_t i = 0; i < j * kNeighbors; ++i) {
          nbr[static_cast<std::size_t>(f * j * kNeighbors + i)] =
              static_cast<std::int32_t>(local[i] + f * level.per_frame);
        }
      }
      IndexTensor nidx(Shape{batch * j, kNeighbors}, std::move(nbr));

      auto grouped_p = g.gather_rows(level.coords, nidx);               // [B*J, S, 3]
      auto rel = g.sub(grouped_p, g.replicate(prev_joints, kNeighbors));
      auto grouped_f = g.gather_rows(level.feats, nidx);                // [B*J, S, Cl]
      // First layer of h_f, split: the grouped half runs per neighbor row,
      // the dependency half once per joint and replicated across S.
      auto zg = g.linear(g.concat_last({rel, grouped_f}), wg_, b1_);
      auto zd = g.replicate(g.linear(dep, wd_), kNeighbors);
      z = g.add(zg, zd);  // [B*J, S, 256]
    } else {
      // Without grouped local features every neighbor row is identical, so
      // the S replication and max-pool reduce to a single row per joint.
      z = g.reshape(g.linear(dep, wd_, b1_), {batch * j, 1, kEmbedding});
    }

    auto a1 = g.bn_relu(z, gamma1_, beta1_, &stats1_, mode);
    auto a2 = f2_.forward(g, a1, mode);
    Result r;
    r.embedding = f3_.forward(g, a2, mode);  // max over S -> [B*J, 256]
    auto h = r2_.forward(g, r1_.forward(g, r.embedding, mode), mode);
    r.joints = g.add(r3_.forward(g, h), prev_joints);
    return r;
  }

  const Options& options() const { return opt_; }

 private:
  Options opt_;
  Tensor<R> wg_, wd_, b1_, gamma1_, beta1_;
  RunningStats<R> stats1_;
  detail_model::DenseBnRelu<R> f2_, r1_, r2_;
  detail_model::TailLayer<R> f3_;
  detail_model::DenseLinear<R> r3_;
};

}  // namespace handfold
