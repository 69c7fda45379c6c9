#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "handfold/params.hpp"

namespace handfold {

// One set-abstraction level of the hierarchical encoder.
struct SetAbstractionConfig {
  double radius = 0;         // normalized units; unused by the global level
  int neighbors = 0;         // S
  int centroids = 0;         // sampled per frame (global level: whole input)
  std::array<int, 3> mlp_channels{};
  bool has_max_pool = true;

  void validate() const {
    if (neighbors < 1 || centroids < 1) {
      throw DimensionError("set abstraction needs neighbors >= 1 and centroids >= 1");
    }
  }
};

// `count` centroid indices over [0, n): distinct via partial Fisher-Yates
// when possible, uniform with replacement only when n < count.
inline std::vector<std::int32_t> sample_centroids(std::int64_t n, std::int64_t count,
                                                  std::uint64_t seed) {
  if (n < 1 || count < 1) throw DimensionError("sample_centroids needs n >= 1, count >= 1");
  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> out(static_cast<std::size_t>(count));
  if (count <= n) {
    std::vector<std::int32_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    for (std::int64_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, n - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      out[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i)];
    }
  } else {
    std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
    for (auto& v : out) v = static_cast<std::int32_t>(pick(rng));
  }
  return out;
}

// Ball query: for each centroid, up to S indices of points within `radius`,
// in input-scan order. Fewer than S hits repeat the first hit; zero hits fall
// back to the nearest point.
template <typename R>
IndexTensor ball_query(std::span<const R> points, std::int64_t n, std::span<const R> centroids,
                       std::int64_t k, double radius, int s_max) {
  if (!(radius > 0)) throw DimensionError("ball query radius must be positive");
  std::vector<std::int32_t> idx(static_cast<std::size_t>(k * s_max));
  const double r2 = radius * radius;
  parallel_chunks(k, [&](std::int64_t c0, std::int64_t c1, int) {
    for (std::int64_t c = c0; c < c1; ++c) {
      const R* cc = centroids.data() + c * 3;
      std::int32_t* row = idx.data() + c * s_max;
      int filled = 0;
      std::int64_t nearest = 0;
      double nearest_d2 = std::numeric_limits<double>::infinity();
      for (std::int64_t p = 0; p < n && filled < s_max; ++p) {
        const R* pp = points.data() + p * 3;
        const double dx = static_cast<double>(pp[0]) - static_cast<double>(cc[0]);
        const double dy = static_cast<double>(pp[1]) - static_cast<double>(cc[1]);
        const double dz = static_cast<double>(pp[2]) - static_cast<double>(cc[2]);
        const double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 <= r2) {
          row[filled++] = static_cast<std::int32_t>(p);
        } else if (filled == 0 && d2 < nearest_d2) {
          nearest_d2 = d2;
          nearest = p;
        }
      }
      if (filled == 0) {
        // Empty ball: nearest point fills every slot. Finish the scan in case
        // the loop above stopped early (it cannot here, but keep it total).
        for (std::int64_t p = 0; p < n; ++p) {
          const R* pp = points.data() + p * 3;
          const double dx = static_cast<double>(pp[0]) - static_cast<double>(cc[0]);
          const double dy = static_cast<double>(pp[1]) - static_cast<double>(cc[1]);
          const double dz = static_cast<double>(pp[2]) - static_cast<double>(cc[2]);
          const double d2 = dx * dx + dy * dy + dz * dz;
          if (d2 < nearest_d2) {
            nearest_d2 = d2;
            nearest = p;
          }
        }
        for (int s = 0; s < s_max; ++s) row[s] = static_cast<std::int32_t>(nearest);
      } else {
        for (int s = filled; s < s_max; ++s) row[s] = row[0];
      }
    }
  });
  return IndexTensor({k, s_max}, std::move(idx));
}

// Output of one set-abstraction level over a whole batch: `per_frame`
// centroids per frame, rows laid out frame-major.
template <typename R>
struct LevelOutput {
  Tensor<R> coords;  // [B*per_frame, 3]
  Tensor<R> feats;   // [B*per_frame, C]
  std::int64_t per_frame = 0;
};

namespace detail_model {

// linear + bn_relu block (the hidden layers of every shared MLP).
template <typename R>
struct DenseBnRelu {
  Tensor<R> w, b, gamma, beta;
  RunningStats<R> stats;

  void init(ParamStore<R>& store, const std::string& name, std::int64_t cin, std::int64_t cout,
            std::mt19937_64& rng) {
    w = store.add(name + ".w", uniform_init<R>({cin, cout}, cin, rng));
    b = store.add(name + ".b", uniform_init<R>({cout}, cin, rng));
    gamma = store.add(name + ".gamma", Tensor<R>::full({cout}, R(1)));
    beta = store.add(name + ".beta", Tensor<R>::zeros({cout}));
    stats = RunningStats<R>::make(cout);
    store.add_buffer(name + ".running_mean", stats.mean);
    store.add_buffer(name + ".running_var", stats.var);
  }

  Tensor<R> forward(Graph<R>& g, const Tensor<R>& x, Mode mode) {
    return g.bn_relu(g.linear(x, w, b), gamma, beta, &stats, mode);
  }
};

// Bare linear output layer (coordinate / residual heads).
template <typename R>
struct DenseLinear {
  Tensor<R> w, b;

  void init(ParamStore<R>& store, const std::string& name, std::int64_t cin, std::int64_t cout,
            std::mt19937_64& rng) {
    w = store.add(name + ".w", uniform_init<R>({cin, cout}, cin, rng));
    b = store.add(name + ".b", uniform_init<R>({cout}, cin, rng));
  }

  Tensor<R> forward(Graph<R>& g, const Tensor<R>& x) { return g.linear(x, w, b); }
};

// Final MLP layer fused with bn + relu + max over the S axis.
template <typename R>
struct TailLayer {
  Tensor<R> w, b, gamma, beta;
  RunningStats<R> stats;

  void init(ParamStore<R>& store, const std::string& name, std::int64_t cin, std::int64_t cout,
            std::mt19937_64& rng) {
    w = store.add(name + ".w", uniform_init<R>({cin, cout}, cin, rng));
    b = store.add(name + ".b", uniform_init<R>({cout}, cin, rng));
    gamma = store.add(name + ".gamma", Tensor<R>::full({cout}, R(1)));
    beta = store.add(name + ".beta", Tensor<R>::zeros({cout}));
    stats = RunningStats<R>::make(cout);
    store.add_buffer(name + ".running_mean", stats.mean);
    store.add_buffer(name + ".running_var", stats.var);
  }

  Tensor<R> forward(Graph<R>& g, const Tensor<R>& x, Mode mode) {
    return g.sa_tail(x, w, b, gamma, beta, &stats, mode);
  }
};

}  // namespace detail_model

// Hierarchical point-set encoder: two sampled set-abstraction levels plus a
// global level over the whole level-2 output.
template <typename R>
class Encoder {
 public:
  static SetAbstractionConfig level1_config() { return {0.12, 64, 512, {32, 32, 128}, true}; }
  static SetAbstractionConfig level2_config() { return {0.2, 64, 128, {64, 64, 256}, true}; }
  static SetAbstractionConfig level3_config() { return {0.0, 128, 1, {128, 128, 512}, true}; }

  Encoder() = default;

  void init(ParamStore<R>& store, std::mt19937_64& rng) {
    init_sampled(store, "sa1", sa1_, level1_config(), /*feat_channels=*/3, rng);
    init_sampled(store, "sa2", sa2_, level2_config(), /*feat_channels=*/128, rng);
    const auto c3 = level3_config().mlp_channels;
    sa3_l1_.init(store, "sa3.l1", 3 + 256, c3[0], rng);
    sa3_l2_.init(store, "sa3.l2", c3[0], c3[1], rng);
    sa3_l3_.init(store, "sa3.l3", c3[1], c3[2], rng);
  }

  struct Result {
    LevelOutput<R> input;  // the raw input cloud as a level (coords + normals)
    LevelOutput<R> l1;
    LevelOutput<R> l2;
    Tensor<R> global;  // [B, 512]
  };

  // points/normals: [B*N, 3] with frame-major rows.
  Result forward(Graph<R>& g, const Tensor<R>& points, const Tensor<R>& normals,
                 std::int64_t batch, std::int64_t points_per_frame, Mode mode,
                 std::uint64_t seed) {
    Result out;
    out.input.coords = g.leaf(points, false);
    out.input.feats = g.leaf(normals, false);
    out.input.per_frame = points_per_frame;
    out.l1 = forward_level(g, 1, out.input, batch, mode, derive_seed(seed, 1));
    out.l2 = forward_level(g, 2, out.l1, batch, mode, derive_seed(seed, 2));
    out.global = global_feature(g, out.l2, batch, mode);
    return out;
  }

  // One sampled set-abstraction level. `centroids_global` (row indices into
  // the level input, frame offsets included) overrides the random sampling;
  // tests use it to pin regions.
  LevelOutput<R> forward_level(Graph<R>& g, int level, const LevelOutput<R>& in,
                               std::int64_t batch, Mode mode, std::uint64_t seed,
                               const std::vector<std::int32_t>* centroids_global = nullptr) {
    if (level == 1) return forward_sampled(g, sa1_, level1_config(), in, batch, mode, seed,
                                           centroids_global);
    if (level == 2) return forward_sampled(g, sa2_, level2_config(), in, batch, mode, seed,
                                           centroids_global);
    throw DimensionError("forward_level: level must be 1 or 2");
  }

  // Global level: shared MLP over every level-2 row, max over each frame.
  Tensor<R> global_feature(Graph<R>& g, const LevelOutput<R>& l2, std::int64_t batch,
                           Mode mode) {
    auto x = g.concat_last({l2.coords, l2.feats});
    auto a = sa3_l2_.forward(g, sa3_l1_.forward(g, x, mode), mode);
    auto stacked = g.reshape(a, {batch, l2.per_frame, a.channels()});
    return sa3_l3_.forward(g, stacked, mode);  // [B, 512]
  }

 private:
  struct SampledLevel {
    Tensor<R> wp, wf, b, gamma, beta;  // split first layer: coords + features
    RunningStats<R> stats;
    detail_model::DenseBnRelu<R> l2;
    detail_model::TailLayer<R> l3;
  };

  void init_sampled(ParamStore<R>& store, const std::string& name, SampledLevel& lvl,
                    const SetAbstractionConfig& cfg, std::int64_t feat_channels,
                    std::mt19937_64& rng) {
    cfg.validate();
    const std::int64_t c1 = cfg.mlp_channels[0];
    const std::int64_t fan_in = 3 + feat_channels;  // logical [p_rel, f] width
    lvl.wp = store.add(name + ".l1.wp", uniform_init<R>({3, c1}, fan_in, rng));
    lvl.wf = store.add(name + ".l1.wf", uniform_init<R>({feat_channels, c1}, fan_in, rng));
    lvl.b = store.add(name + ".l1.b", uniform_init<R>({c1}, fan_in, rng));
    lvl.gamma = store.add(name + ".l1.gamma", Tensor<R>::full({c1}, R(1)));
    lvl.beta = store.add(name + ".l1.beta", Tensor<R>::zeros({c1}));
    lvl.stats = RunningStats<R>::make(c1);
    store.add_buffer(name + ".l1.running_mean", lvl.stats.mean);
    store.add_buffer(name + ".l1.running_var", lvl.stats.var);
    lvl.l2.init(store, name + ".l2", c1, cfg.mlp_channels[1], rng);
    lvl.l3.init(store, name + ".l3", cfg.mlp_channels[1], cfg.mlp_channels[2], rng);
  }

  LevelOutput<R> forward_sampled(Graph<R>& g, SampledLevel& lvl,
                                 const SetAbstractionConfig& cfg, const LevelOutput<R>& in,
                                 std::int64_t batch, Mode mode, std::uint64_t seed,
                                 const std::vector<std::int32_t>* centroids_global) {
    const std::int64_t n_in = in.per_frame;
    const std::int64_t k = cfg.centroids;
    const int s = cfg.neighbors;
    if (centroids_global &&
        centroids_global->size() != static_cast<std::size_t>(batch * k)) {
      throw DimensionError("centroid override has the wrong length");
    }

    // Per-frame centroid sampling and ball query, merged with frame offsets.
    std::vector<std::int32_t> centroid_idx(static_cast<std::size_t>(batch * k));
    std::vector<std::int32_t> neighbor_idx(static_cast<std::size_t>(batch * k * s));
    auto coords = in.coords.values();
    for (std::int64_t f = 0; f < batch; ++f) {
      std::vector<std::int32_t> local;
      if (!centroids_global) {
        local = sample_centroids(n_in, k, derive_seed(seed, static_cast<std::uint64_t>(f)));
      }
      std::vector<R> cpts(static_cast<std::size_t>(k) * 3);
      for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t gidx =
            centroids_global ? (*centroids_global)[static_cast<std::size_t>(f * k + i)]
                             : f * n_in + local[static_cast<std::size_t>(i)];
        centroid_idx[static_cast<std::size_t>(f * k + i)] = static_cast<std::int32_t>(gidx);
        for (int c = 0; c < 3; ++c) cpts[static_cast<std::size_t>(i * 3 + c)] = coords[gidx * 3 + c];
      }
      auto frame_points = coords.subspan(static_cast<std::size_t>(f * n_in * 3),
                                         static_cast<std::size_t>(n_in * 3));
      IndexTensor nbrs = ball_query<R>(frame_points, n_in, cpts, k, cfg.radius, s);
      for (std::int64_t i = 0; i < k * s; ++i) {
        neighbor_idx[static_cast<std::size_t>((f * k * s) + i)] =
            static_cast<std::int32_t>(nbrs[i] + f * n_in);
      }
    }
    IndexTensor cidx(Shape{batch * k}, std::move(centroid_idx));
    IndexTensor nidx(Shape{batch * k, s}, std::move(neighbor_idx));

    auto centroid_coords = g.gather_rows(in.coords, cidx);             // [B*K, 3]
    auto grouped_coords = g.gather_rows(in.coords, nidx);              // [B*K, S, 3]
    auto rel = g.sub(grouped_coords, g.replicate(centroid_coords, s));

    // First shared-MLP layer, split so the feature half runs per input point
    // and is gathered, instead of per grouped row.
    auto feat_proj = g.linear(in.feats, lvl.wf);                       // [B*Nin, C1]
    auto z = g.add(g.linear(rel, lvl.wp, lvl.b), g.gather_rows(feat_proj, nidx));
    auto a1 = g.bn_relu(z, lvl.gamma, lvl.beta, &lvl.stats, mode);
    auto a2 = lvl.l2.forward(g, a1, mode);

    LevelOutput<R> out;
    out.coords = centroid_coords;
    out.feats = lvl.l3.forward(g, a2, mode);  // [B*K, C3]
    out.per_frame = k;
    return out;
  }

  SampledLevel sa1_, sa2_;
  detail_model::DenseBnRelu<R> sa3_l1_, sa3_l2_;
  detail_model::TailLayer<R> sa3_l3_;
};

}  // namespace handfold
