#include "handfold/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "handfold/loss.hpp"
#include "handfold/model.hpp"
#include "handfold/synth.hpp"

namespace handfold {

namespace {

constexpr double kOpStep = 1e-3;    // per the operator check contract
constexpr double kOpRtol = 1e-4;
constexpr double kPipeStep = 1e-6;  // relu kink crossings decay linearly in h
constexpr double kPipeRtol = 1e-3;
constexpr double kAtol = 1e-7;

using EvalFn = std::function<double()>;

struct Harness {
  GradCheckEntry entry;

  void compare(double analytic, double numeric, double rtol) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), kAtol / rtol});
    const double err = std::abs(analytic - numeric) / scale;
    ++entry.checked;
    if (err > entry.max_err) entry.max_err = err;
  }

  void finish(double rtol) { entry.pass = entry.max_err <= rtol; }
};

double central_diff(const EvalFn& eval, double* slot, double step) {
  const double orig = *slot;
  *slot = orig + step;
  const double fp = eval();
  *slot = orig - step;
  const double fm = eval();
  *slot = orig;
  return (fp - fm) / (2.0 * step);
}

void check_all(Harness& h, const EvalFn& eval, Tensor<double>& param,
               const Tensor<double>& analytic, double step, std::int64_t max_checks = -1,
               std::uint64_t seed = 0) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(param.numel()));
  for (std::int64_t i = 0; i < param.numel(); ++i) order[static_cast<std::size_t>(i)] = i;
  if (max_checks > 0 && max_checks < param.numel()) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(max_checks));
  }
  for (std::int64_t i : order) {
    h.compare(analytic[i], central_diff(eval, &param[i], step), kOpRtol);
  }
}

Tensor<double> rand_t(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::uniform(std::move(shape), lo, hi, rng);
}

Tensor<double> rand_away_from_zero(Shape shape, std::uint64_t seed, double margin = 0.05) {
  auto t = rand_t(std::move(shape), seed);
  for (auto& v : t.values()) v += v >= 0 ? margin : -margin;
  return t;
}

// Per-operator check cases. Each builds a fresh graph per evaluation; ops
// with batch statistics also rebuild their running-stats state.
GradCheckEntry check_op(OpKind op, std::uint64_t seed) {
  Harness h;
  h.entry.name = op_name(op);
  auto finish = [&](double rtol = kOpRtol) {
    h.finish(rtol);
    return h.entry;
  };

  switch (op) {
    case OpKind::linear: {
      auto x = rand_t({4, 3}, seed), w = rand_t({3, 5}, seed + 1), b = rand_t({5}, seed + 2);
      auto eval = [&] {
        Graph<double> g;
        double acc = 0;
        for (double v : g.linear(x, w, b).values()) acc += v;
        return acc;
      };
      Graph<double> g;
      auto xl = g.leaf(x, true), wl = g.leaf(w, true), bl = g.leaf(b, true);
      g.backward(g.sum_all(g.linear(xl, wl, bl)));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      check_all(h, eval, w, g.grad(wl), kOpStep);
      check_all(h, eval, b, g.grad(bl), kOpStep);
      return finish();
    }
    case OpKind::relu: {
      auto x = rand_away_from_zero({6, 4}, seed);
      auto eval = [&] {
        Graph<double> g;
        double acc = 0;
        for (double v : g.relu(x).values()) acc += v;
        return acc;
      };
      Graph<double> g;
      auto xl = g.leaf(x, true);
      g.backward(g.sum_all(g.relu(xl)));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      return finish();
    }
    case OpKind::batch_norm:
    case OpKind::bn_relu: {
      const bool fused = op == OpKind::bn_relu;
      auto x = rand_t({8, 4}, seed), gm = rand_t({4}, seed + 1, 0.5, 1.5),
           bt = rand_t({4}, seed + 2);
      auto run = [&](Graph<double>& g, const Tensor<double>& xv, const Tensor<double>& gv,
                     const Tensor<double>& bv) {
        RunningStats<double> st = RunningStats<double>::make(4);
        auto y = fused ? g.bn_relu(xv, gv, bv, &st, Mode::train)
                       : g.batch_norm(xv, gv, bv, &st, Mode::train);
        return g.smooth_l1_sum(y, 10.0, SmoothL1Variant::huber);  // quadratic readout
      };
      auto eval = [&] {
        Graph<double> g;
        return run(g, x, gm, bt).item();
      };
      Graph<double> g;
      auto xl = g.leaf(x, true), gl = g.leaf(gm, true), bl = g.leaf(bt, true);
      g.backward(run(g, xl, gl, bl));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      check_all(h, eval, gm, g.grad(gl), kOpStep);
      check_all(h, eval, bt, g.grad(bl), kOpStep);
      return finish();
    }
    case OpKind::sa_tail: {
      auto x = rand_t({3, 4, 3}, seed), w = rand_t({3, 5}, seed + 1), b = rand_t({5}, seed + 2),
           gm = rand_t({5}, seed + 3, 0.5, 1.5), bt = rand_t({5}, seed + 4);
      auto run = [&](Graph<double>& g, const Tensor<double>& xv, const Tensor<double>& wv,
                     const Tensor<double>& bv, const Tensor<double>& gv,
                     const Tensor<double>& bev) {
        RunningStats<double> st = RunningStats<double>::make(5);
        return g.sum_all(g.sa_tail(xv, wv, bv, gv, bev, &st, Mode::train));
      };
      auto eval = [&] {
        Graph<double> g;
        return run(g, x, w, b, gm, bt).item();
      };
      Graph<double> g;
      auto xl = g.leaf(x, true), wl = g.leaf(w, true), bl = g.leaf(b, true),
           gl = g.leaf(gm, true), bel = g.leaf(bt, true);
      g.backward(run(g, xl, wl, bl, gl, bel));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      check_all(h, eval, w, g.grad(wl), kOpStep);
      check_all(h, eval, gm, g.grad(gl), kOpStep);
      check_all(h, eval, bt, g.grad(bel), kOpStep);
      return finish();
    }
    case OpKind::concat_last: {
      auto a = rand_t({3, 2}, seed), b = rand_t({3, 4}, seed + 1);
      auto eval = [&] {
        Graph<double> g;
        double acc = 0;
        std::int64_t i = 0;
        for (double v : g.concat_last({a, b}).values()) acc += v * static_cast<double>(1 + i++ % 3);
        return acc;
      };
      Graph<double> g;
      auto al = g.leaf(a, true), bl = g.leaf(b, true);
      auto y = g.concat_last({al, bl});
      // weighted readout via gathers of the flattened output
      auto flat = g.reshape(y, {18, 1});
      Tensor<double> total;
      for (int w = 1; w <= 3; ++w) {
        std::vector<std::int32_t> idx;
        for (std::int64_t i = 0; i < 18; ++i)
          if (1 + i % 3 == w) idx.push_back(static_cast<std::int32_t>(i));
        auto part = g.scale(g.sum_all(g.gather_rows(flat, IndexTensor::from(idx))),
                            static_cast<double>(w));
        total = total.defined() ? g.add(total, part) : part;
      }
      g.backward(total);
      check_all(h, eval, a, g.grad(al), kOpStep);
      check_all(h, eval, b, g.grad(bl), kOpStep);
      return finish();
    }
    case OpKind::max_over_axis: {
      auto x = rand_t({2, 6, 4}, seed);
      auto eval = [&] {
        Graph<double> g;
        auto [y, am] = g.max_over_axis(x, 1);
        double acc = 0;
        for (double v : y.values()) acc += v;
        return acc;
      };
      Graph<double> g;
      auto xl = g.leaf(x, true);
      auto [y, am] = g.max_over_axis(xl, 1);
      g.backward(g.sum_all(y));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      return finish();
    }
    case OpKind::gather_rows: {
      auto x = rand_t({5, 3}, seed);
      std::vector<std::int32_t> idx = {4, 0, 0, 2, 1, 4};
      auto eval = [&] {
        Graph<double> g;
        double acc = 0;
        for (double v : g.gather_rows(x, IndexTensor::from(idx)).values()) acc += v;
        return acc;
      };
      Graph<double> g;
      auto xl = g.leaf(x, true);
      g.backward(g.sum_all(g.gather_rows(xl, IndexTensor::from(idx))));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      return finish();
    }
    case OpKind::add:
    case OpKind::sub: {
      const bool is_sub = op == OpKind::sub;
      auto a = rand_t({3, 4}, seed), b = rand_t({3, 4}, seed + 1);
      auto run = [&](Graph<double>& g, const Tensor<double>& av, const Tensor<double>& bv) {
        auto y = is_sub ? g.sub(av, bv) : g.add(av, bv);
        return g.smooth_l1_sum(y, 10.0, SmoothL1Variant::huber);
      };
      auto eval = [&] {
        Graph<double> g;
        return run(g, a, b).item();
      };
      Graph<double> g;
      auto al = g.leaf(a, true), bl = g.leaf(b, true);
      g.backward(run(g, al, bl));
      check_all(h, eval, a, g.grad(al), kOpStep);
      check_all(h, eval, b, g.grad(bl), kOpStep);
      return finish();
    }
    case OpKind::replicate: {
      auto x = rand_t({3, 4}, seed);
      auto run = [&](Graph<double>& g, const Tensor<double>& xv) {
        return g.smooth_l1_sum(g.replicate(xv, 3), 10.0, SmoothL1Variant::huber);
      };
      auto eval = [&] {
        Graph<double> g;
        return run(g, x).item();
      };
      Graph<double> g;
      auto xl = g.leaf(x, true);
      g.backward(run(g, xl));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      return finish();
    }
    case OpKind::reshape: {
      auto x = rand_t({4, 6}, seed);
      auto run = [&](Graph<double>& g, const Tensor<double>& xv) {
        return g.smooth_l1_sum(g.reshape(xv, {8, 3}), 10.0, SmoothL1Variant::huber);
      };
      auto eval = [&] {
        Graph<double> g;
        return run(g, x).item();
      };
      Graph<double> g;
      auto xl = g.leaf(x, true);
      g.backward(run(g, xl));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      return finish();
    }
    case OpKind::sum_all: {
      auto x = rand_t({7}, seed);
      auto eval = [&] {
        Graph<double> g;
        return g.sum_all(x).item();
      };
      Graph<double> g;
      auto xl = g.leaf(x, true);
      g.backward(g.sum_all(xl));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      return finish();
    }
    case OpKind::scale: {
      auto x = rand_t({5, 2}, seed);
      auto eval = [&] {
        Graph<double> g;
        return g.scale(g.sum_all(x), -1.7).item();
      };
      Graph<double> g;
      auto xl = g.leaf(x, true);
      g.backward(g.scale(g.sum_all(xl), -1.7));
      check_all(h, eval, x, g.grad(xl), kOpStep);
      return finish();
    }
    case OpKind::smooth_l1_sum: {
      // keep entries away from both kinks (0 and |x| = delta)
      auto x = rand_t({6, 3}, seed);
      for (auto& v : x.values()) {
        if (std::abs(v) < 0.03) v += v >= 0 ? 0.03 : -0.03;
        if (std::abs(std::abs(v) - 0.01) < 0.004) v *= 2.0;
      }
      for (auto variant : {SmoothL1Variant::paper, SmoothL1Variant::huber}) {
        auto eval = [&] {
          Graph<double> g;
          return g.smooth_l1_sum(x, 0.01, variant).item();
        };
        Graph<double> g;
        auto xl = g.leaf(x, true);
        g.backward(g.smooth_l1_sum(xl, 0.01, variant));
        check_all(h, eval, x, g.grad(xl), kOpStep);
      }
      return finish();
    }
    case OpKind::leaf: break;
  }
  h.entry.pass = false;
  return h.entry;
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, bool negative_control) {
  GradCheckReport report;
  for (OpKind op : kDifferentiableOps) {
    report.operators.push_back(check_op(op, derive_seed(seed, static_cast<std::uint64_t>(op))));
  }

  // Full pipeline: synthetic 64-point frame, J=16, K=1, joint loss over all
  // stages, gradients spot-checked across every parameter tensor.
  Harness h;
  h.entry.name = "pipeline(K=1, 64 points, J=16)";
  {
    ModelConfig cfg;
    cfg.joints = 16;
    cfg.local_folds = 1;
    cfg.points = 64;
    SynthOptions sopt;
    sopt.points = 64;
    sopt.surface_samples = 256;
    sopt.normal_neighbors = 12;
    PointFrame frame = synth_hand(derive_seed(seed, 0xF0), sopt);

    auto chain = KinematicChain::icvl();
    std::vector<PointMatrix> gts = {*frame.gt_joints};
    SkeletonPrior skel = build_skeleton(gts, chain, seed);
    HandFoldingNet<double> model(cfg, skel, build_adjacency(chain), derive_seed(seed, 0xF1));

    auto run = [&](Graph<double>& g) {
      auto fwd = model.forward(g, std::span<const PointFrame>(&frame, 1), Mode::train,
                               derive_seed(seed, 0xF2));
      Tensor<double> gt = Tensor<double>::zeros({16, 3});
      for (int k = 0; k < 16; ++k)
        for (int c = 0; c < 3; ++c) gt[k * 3 + c] = (*frame.gt_joints)(k, c);
      auto loss = joint_loss_graph(g, fwd.stage_joints, g.leaf(gt, false), 1,
                                   cfg.loss_variant == SmoothL1Variant::paper ? 0.01 : 0.01,
                                   cfg.loss_variant);
      return loss.total;
    };
    auto eval = [&] {
      Graph<double> g;
      return run(g).item();
    };

    Graph<double> g;
    g.backward(run(g));

    // Stratified sample: a few entries from every parameter tensor, up to a
    // fixed budget, so each layer's wiring is exercised.
    auto& entries = model.params().mutable_params();
    const std::int64_t budget = 160;
    const std::int64_t per_tensor =
        std::max<std::int64_t>(2, budget / static_cast<std::int64_t>(entries.size()));
    bool first = true;
    std::uint64_t sub_seed = derive_seed(seed, 0xF3);
    for (auto& e : entries) {
      if (!g.has_grad(e.value)) continue;  // never true for this wiring
      const Tensor<double>& analytic = g.grad(e.value);
      Tensor<double> adjusted = analytic;
      if (negative_control && first) {
        adjusted = analytic.clone();
        adjusted[0] += 0.05 * (1.0 + std::abs(adjusted[0]));  // deliberate perturbation
        first = false;
      }
      std::vector<std::int64_t> order(static_cast<std::size_t>(e.value.numel()));
      for (std::int64_t i = 0; i < e.value.numel(); ++i) order[static_cast<std::size_t>(i)] = i;
      std::mt19937_64 rng(sub_seed++);
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(static_cast<std::size_t>(std::min<std::int64_t>(per_tensor, e.value.numel())));
      if (negative_control && adjusted.buffer_id() != analytic.buffer_id()) {
        if (std::find(order.begin(), order.end(), 0) == order.end()) order[0] = 0;
      }
      for (std::int64_t i : order) {
        h.compare(adjusted[i], central_diff(eval, &e.value[i], kPipeStep), kPipeRtol);
      }
    }
    h.finish(kPipeRtol);
  }
  report.pipeline = h.entry;

  report.all_pass = report.pipeline.pass;
  for (const auto& e : report.operators) report.all_pass = report.all_pass && e.pass;
  return report;
}

}  // namespace handfold
