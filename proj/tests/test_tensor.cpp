#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "handfold/graph.hpp"
#include "helpers/oracles.hpp"

using namespace handfold;
using oracles::check_gradient;
using oracles::random_tensor;
using oracles::random_tensor_away_from_zero;

namespace {

Tensor<double> identity2() { return Tensor<double>::from({2, 2}, {1, 0, 0, 1}); }

}  // namespace

TEST_CASE("linear: identity and direct formula") {
  Graph<double> g;
  auto x = Tensor<double>::from({1, 2}, {1, 2});
  auto y = g.linear(x, identity2(), Tensor<double>::zeros({2}));
  CHECK(y[0] == doctest::Approx(1));
  CHECK(y[1] == doctest::Approx(2));

  Graph<double> g2;
  auto x2 = Tensor<double>::from({1, 2}, {1, 0});
  auto w = Tensor<double>::from({2, 2}, {2, 3, 4, 5});
  auto b = Tensor<double>::from({2}, {1, 1});
  auto y2 = g2.linear(x2, w, b);
  CHECK(y2[0] == doctest::Approx(3));
  CHECK(y2[1] == doctest::Approx(4));
}

TEST_CASE("linear: shape mismatch reports both shapes") {
  Graph<double> g;
  auto x = Tensor<double>::zeros({4, 3});
  auto w = Tensor<double>::zeros({2, 5});
  try {
    g.linear(x, w);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(4,3)") != std::string::npos);
    CHECK(msg.find("(2,5)") != std::string::npos);
  }
}

TEST_CASE("linear: gradients match central finite differences") {
  auto x = random_tensor({4, 3}, 11);
  auto w = random_tensor({3, 5}, 12);
  auto b = random_tensor({5}, 13);
  // A second fixed layer after the checked one keeps dx informative per entry.
  auto w2 = random_tensor({5, 2}, 14);

  auto eval = [&]() {
    Graph<double> gg;
    auto h = gg.linear(gg.leaf(x, true), gg.leaf(w, true), gg.leaf(b, true));
    auto out = gg.linear(h, w2);
    double acc = 0;
    for (double v : out.values()) acc += v;
    return acc;
  };
  Graph<double> g;
  auto xl = g.leaf(x, true), wl = g.leaf(w, true), bl = g.leaf(b, true);
  auto loss = g.sum_all(g.linear(g.linear(xl, wl, bl), w2));
  g.backward(loss);

  CHECK(check_gradient(eval, w, g.grad(wl)).pass);
  CHECK(check_gradient(eval, x, g.grad(xl)).pass);
  CHECK(check_gradient(eval, b, g.grad(bl)).pass);
}

TEST_CASE("relu: examples and gradients") {
  Graph<double> g;
  auto y = g.relu(Tensor<double>::from({3}, {-1, 0, 2}));
  CHECK(y[0] == 0);
  CHECK(y[1] == 0);
  CHECK(y[2] == 2);

  // all-negative input: zero output, zero gradient
  Graph<double> g2;
  auto xn = Tensor<double>::from({4}, {-1, -2, -3, -0.5});
  auto xl = g2.leaf(xn, true);
  auto out = g2.relu(xl);
  for (double v : out.values()) CHECK(v == 0);
  g2.backward(g2.sum_all(out));
  for (double v : g2.grad(xl).values()) CHECK(v == 0);

  auto x = random_tensor_away_from_zero({6, 3}, 21);
  auto eval = [&]() {
    Graph<double> gg;
    auto o = gg.relu(gg.leaf(x, true));
    double acc = 0;
    for (double v : o.values()) acc += v;
    return acc;
  };
  Graph<double> g3;
  auto xl3 = g3.leaf(x, true);
  g3.backward(g3.sum_all(g3.relu(xl3)));
  CHECK(check_gradient(eval, x, g3.grad(xl3)).pass);
}

TEST_CASE("batch_norm: normalizes to zero mean unit variance in train mode") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(5.0, 2.0);
  auto x = Tensor<double>::zeros({64, 4});
  for (auto& v : x.values()) v = dist(rng);
  auto gamma = Tensor<double>::full({4}, 1.0);
  auto beta = Tensor<double>::zeros({4});
  RunningStats<double> stats = RunningStats<double>::make(4);
  Graph<double> g;
  auto y = g.batch_norm(x, gamma, beta, &stats, Mode::train);
  for (int c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (int r = 0; r < 64; ++r) mean += y[r * 4 + c];
    mean /= 64;
    for (int r = 0; r < 64; ++r) var += (y[r * 4 + c] - mean) * (y[r * 4 + c] - mean);
    var /= 64;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps shifts variance by ~1e-5
  }
}

TEST_CASE("batch_norm: eval mode with unit running stats is identity") {
  auto x = random_tensor({8, 3}, 31);
  auto gamma = Tensor<double>::full({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  RunningStats<double> stats = RunningStats<double>::make(3);
  Graph<double> g;
  auto y = g.batch_norm(x, gamma, beta, &stats, Mode::eval);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-5);
}

TEST_CASE("batch_norm: batch of one with zero variance does not fail") {
  auto x = Tensor<double>::from({1, 2}, {3.0, -1.0});
  auto gamma = Tensor<double>::full({2}, 1.0);
  auto beta = Tensor<double>::zeros({2});
  Graph<double> g;
  auto y = g.batch_norm(x, gamma, beta, nullptr, Mode::train);
  for (double v : y.values()) CHECK(std::isfinite(v));
  CHECK(std::abs(y[0]) < 1e-9);  // (x - mean) = 0
}

TEST_CASE("batch_norm: train-mode gradients match finite differences") {
  auto x = random_tensor({8, 4}, 41);
  auto gamma = random_tensor({4}, 42, 0.5, 1.5);
  auto beta = random_tensor({4}, 43);

  // Quadratic readout (huber with a large delta is x^2/(2 delta) everywhere
  // here): smooth, and row-dependent so dx is not annihilated by the mean
  // subtraction inside the normalization.
  auto eval = [&]() {
    Graph<double> gg;
    RunningStats<double> st = RunningStats<double>::make(4);
    auto o = gg.batch_norm(gg.leaf(x, true), gg.leaf(gamma, true), gg.leaf(beta, true), &st,
                           Mode::train);
    return gg.smooth_l1_sum(o, 10.0, SmoothL1Variant::huber).item();
  };
  Graph<double> g;
  RunningStats<double> st = RunningStats<double>::make(4);
  auto xl = g.leaf(x, true), gl = g.leaf(gamma, true), bl = g.leaf(beta, true);
  auto o = g.batch_norm(xl, gl, bl, &st, Mode::train);
  g.backward(g.smooth_l1_sum(o, 10.0, SmoothL1Variant::huber));

  CHECK(check_gradient(eval, x, g.grad(xl)).pass);
  CHECK(check_gradient(eval, gamma, g.grad(gl)).pass);
  CHECK(check_gradient(eval, beta, g.grad(bl)).pass);
}

TEST_CASE("concat_last: shapes, identity, gradient slices") {
  Graph<double> g;
  auto a = random_tensor({2, 3}, 51);
  auto b = random_tensor({2, 2}, 52);
  auto y = g.concat_last({a, b});
  CHECK(y.shape() == Shape{2, 5});
  CHECK(y[0] == a[0]);
  CHECK(y[3] == b[0]);

  Graph<double> g1;
  auto single = g1.concat_last({a});
  CHECK(single.shape() == a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(single[i] == a[i]);

  CHECK_THROWS_AS((void)g1.concat_last({a, random_tensor({3, 2}, 53)}), DimensionError&);

  auto eval = [&]() {
    Graph<double> gg;
    auto o = gg.concat_last({gg.leaf(a, true), gg.leaf(b, true)});
    double acc = 0;
    for (double v : o.values()) acc += v;
    return acc;
  };
  Graph<double> g2;
  auto al = g2.leaf(a, true), bl = g2.leaf(b, true);
  g2.backward(g2.sum_all(g2.concat_last({al, bl})));
  CHECK(check_gradient(eval, a, g2.grad(al)).pass);
  CHECK(check_gradient(eval, b, g2.grad(bl)).pass);
}

TEST_CASE("max_over_axis: examples, tie-break, gradient routing") {
  Graph<double> g;
  auto [vals, amax] = g.max_over_axis(Tensor<double>::from({2, 2}, {1, 5, 3, 2}), 0);
  CHECK(vals[0] == 3);
  CHECK(vals[1] == 5);
  CHECK(amax[0] == 1);
  CHECK(amax[1] == 0);

  // ties resolve to the lowest index
  Graph<double> gt;
  auto [tv, ta] = gt.max_over_axis(Tensor<double>::from({3, 1}, {7, 7, 7}), 0);
  CHECK(tv[0] == 7);
  CHECK(ta[0] == 0);

  // S == 1: identity on values, gradient passes through
  Graph<double> g1;
  auto x1 = random_tensor({1, 4}, 61);
  auto xl1 = g1.leaf(x1, true);
  auto [v1, a1] = g1.max_over_axis(xl1, 0);
  for (int i = 0; i < 4; ++i) CHECK(v1[i] == x1[i]);
  g1.backward(g1.sum_all(v1));
  for (double gv : g1.grad(xl1).values()) CHECK(gv == 1.0);

  // FD with unique maxima
  auto x = random_tensor({2, 6, 4}, 62);
  auto eval = [&]() {
    Graph<double> gg;
    auto [o, am] = gg.max_over_axis(gg.leaf(x, true), 1);
    double acc = 0;
    for (double v : o.values()) acc += v;
    return acc;
  };
  Graph<double> g2;
  auto xl = g2.leaf(x, true);
  auto [o, am] = g2.max_over_axis(xl, 1);
  g2.backward(g2.sum_all(o));
  CHECK(check_gradient(eval, x, g2.grad(xl)).pass);

  // gradient mass conservation: sum of routed grads equals sum of out grads
  double mass = 0;
  for (double v : g2.grad(xl).values()) mass += v;
  CHECK(mass == doctest::Approx(static_cast<double>(o.numel())));
}

TEST_CASE("gather_rows: examples, duplicates, out-of-range, mass conservation") {
  auto x = Tensor<double>::from({3, 2}, {0, 1, 10, 11, 20, 21});
  Graph<double> g;
  auto y = g.gather_rows(x, IndexTensor::from({2, 0}));
  CHECK(y.shape() == Shape{2, 2});
  CHECK(y[0] == 20);
  CHECK(y[3] == 1);

  // duplicated index: gradients add
  Graph<double> g2;
  auto xl = g2.leaf(x, true);
  auto y2 = g2.gather_rows(xl, IndexTensor::from({1, 1}));
  g2.backward(g2.sum_all(y2));
  auto gx = g2.grad(xl);
  CHECK(gx[2] == 2.0);
  CHECK(gx[3] == 2.0);
  CHECK(gx[0] == 0.0);

  Graph<double> g3;
  CHECK_THROWS_AS((void)g3.gather_rows(x, IndexTensor::from({3})), DimensionError&);

  auto xr = random_tensor({5, 3}, 71);
  std::vector<std::int32_t> idx = {4, 0, 0, 2, 4, 4, 1};
  auto eval = [&]() {
    Graph<double> gg;
    auto o = gg.gather_rows(gg.leaf(xr, true), IndexTensor::from(idx));
    double acc = 0;
    for (double v : o.values()) acc += v;
    return acc;
  };
  Graph<double> g4;
  auto xl4 = g4.leaf(xr, true);
  auto o4 = g4.gather_rows(xl4, IndexTensor::from(idx));
  g4.backward(g4.sum_all(o4));
  CHECK(check_gradient(eval, xr, g4.grad(xl4)).pass);

  double mass = 0;
  for (double v : g4.grad(xl4).values()) mass += v;
  CHECK(mass == doctest::Approx(static_cast<double>(o4.numel())));
}

TEST_CASE("backward: ones for sum, detached loss, double backward, non-scalar") {
  Graph<double> g;
  auto x = Tensor<double>::from({3}, {4, 5, 6});
  auto xl = g.leaf(x, true);
  auto loss = g.sum_all(xl);
  g.backward(loss);
  for (double v : g.grad(xl).values()) CHECK(v == 1.0);

  Graph<double> g2;
  auto constant = Tensor<double>::scalar(3.0);
  try {
    g2.backward(constant);
    FAIL("expected GraphError");
  } catch (const GraphError& e) {
    CHECK(std::string(e.what()).find("loss not attached to graph") != std::string::npos);
  }

  Graph<double> g3;
  auto l3 = g3.sum_all(g3.leaf(x, true));
  g3.backward(l3);
  CHECK_THROWS_AS(g3.backward(l3), GraphError&);

  Graph<double> g4;
  auto y4 = g4.relu(g4.leaf(x, true));
  CHECK_THROWS_AS(g4.backward(y4), DimensionError&);
}

TEST_CASE("backward: composite linear-relu-linear matches finite differences") {
  auto x = random_tensor_away_from_zero({4, 3}, 81);
  auto w1 = random_tensor({3, 6}, 82);
  auto b1 = random_tensor({6}, 83);
  auto w2 = random_tensor({6, 2}, 84);
  auto b2 = random_tensor({2}, 85);

  auto eval = [&]() {
    Graph<double> gg;
    auto h = gg.relu(gg.linear(gg.leaf(x, true), gg.leaf(w1, true), gg.leaf(b1, true)));
    auto o = gg.linear(h, gg.leaf(w2, true), gg.leaf(b2, true));
    double acc = 0;
    for (double v : o.values()) acc += v;
    return acc;
  };
  Graph<double> g;
  auto xl = g.leaf(x, true), w1l = g.leaf(w1, true), b1l = g.leaf(b1, true),
       w2l = g.leaf(w2, true), b2l = g.leaf(b2, true);
  auto loss = g.sum_all(g.linear(g.relu(g.linear(xl, w1l, b1l)), w2l, b2l));
  g.backward(loss);
  CHECK(check_gradient(eval, x, g.grad(xl)).pass);
  CHECK(check_gradient(eval, w1, g.grad(w1l)).pass);
  CHECK(check_gradient(eval, b1, g.grad(b1l)).pass);
  CHECK(check_gradient(eval, w2, g.grad(w2l)).pass);
  CHECK(check_gradient(eval, b2, g.grad(b2l)).pass);
}

TEST_CASE("add/sub/replicate/reshape/scale gradients") {
  auto a = random_tensor({3, 4}, 91);
  auto b = random_tensor({3, 4}, 92);

  auto eval = [&]() {
    Graph<double> gg;
    auto s = gg.sub(gg.leaf(a, true), gg.leaf(b, true));
    auto r = gg.replicate(s, 3);                    // [3,3,4]
    auto f = gg.reshape(r, {9, 4});
    auto sc = gg.scale(gg.sum_all(f), 0.5);
    return sc.item();
  };
  Graph<double> g;
  auto al = g.leaf(a, true), bl = g.leaf(b, true);
  auto loss = g.scale(g.sum_all(g.reshape(g.replicate(g.sub(al, bl), 3), {9, 4})), 0.5);
  g.backward(loss);
  CHECK(check_gradient(eval, a, g.grad(al)).pass);
  CHECK(check_gradient(eval, b, g.grad(bl)).pass);
  // replicate-then-sum makes each input entry count 3 times, scaled by 0.5
  for (double v : g.grad(al).values()) CHECK(v == doctest::Approx(1.5));
}

TEST_CASE("bn_relu equals batch_norm followed by relu") {
  auto x = random_tensor({16, 5}, 101, -2.0, 2.0);
  auto gamma = random_tensor({5}, 102, 0.5, 1.5);
  auto beta = random_tensor({5}, 103);

  Graph<double> g1;
  RunningStats<double> s1 = RunningStats<double>::make(5);
  auto fused = g1.bn_relu(x, gamma, beta, &s1, Mode::train);

  Graph<double> g2;
  RunningStats<double> s2 = RunningStats<double>::make(5);
  auto ref = g2.relu(g2.batch_norm(x, gamma, beta, &s2, Mode::train));

  CHECK(oracles::max_abs_diff(fused.values(), ref.values()) < 1e-12);
  CHECK(oracles::max_abs_diff(s1.mean.values(), s2.mean.values()) < 1e-12);

  // gradient equivalence through both routes
  Graph<double> ga;
  RunningStats<double> sa = RunningStats<double>::make(5);
  auto xa = ga.leaf(x, true), gga = ga.leaf(gamma, true), gba = ga.leaf(beta, true);
  ga.backward(ga.sum_all(ga.bn_relu(xa, gga, gba, &sa, Mode::train)));

  Graph<double> gb;
  RunningStats<double> sb = RunningStats<double>::make(5);
  auto xb = gb.leaf(x, true), ggb = gb.leaf(gamma, true), gbb = gb.leaf(beta, true);
  gb.backward(gb.sum_all(gb.relu(gb.batch_norm(xb, ggb, gbb, &sb, Mode::train))));

  CHECK(oracles::max_abs_diff(ga.grad(xa).values(), gb.grad(xb).values()) < 1e-10);
  CHECK(oracles::max_abs_diff(ga.grad(gga).values(), gb.grad(ggb).values()) < 1e-10);
  CHECK(oracles::max_abs_diff(ga.grad(gba).values(), gb.grad(gbb).values()) < 1e-10);
}

TEST_CASE("sa_tail equals linear+batch_norm+relu+max composition") {
  const std::int64_t regions = 7, S = 5, cin = 4, cout = 6;
  auto x = random_tensor({regions, S, cin}, 111);
  auto w = random_tensor({cin, cout}, 112);
  auto b = random_tensor({cout}, 113);
  auto gamma = random_tensor({cout}, 114, 0.5, 1.5);
  auto beta = random_tensor({cout}, 115);

  Graph<double> g1;
  RunningStats<double> s1 = RunningStats<double>::make(cout);
  auto fused = g1.sa_tail(x, w, b, gamma, beta, &s1, Mode::train);

  Graph<double> g2;
  RunningStats<double> s2 = RunningStats<double>::make(cout);
  auto z = g2.linear(x, w, b);
  auto a = g2.relu(g2.batch_norm(z, gamma, beta, &s2, Mode::train));
  auto [ref, am] = g2.max_over_axis(a, 1);

  CHECK(fused.shape() == ref.shape());
  CHECK(oracles::max_abs_diff(fused.values(), ref.values()) < 1e-10);
  CHECK(oracles::max_abs_diff(s1.var.values(), s2.var.values()) < 1e-10);

  Graph<double> ga;
  RunningStats<double> sa = RunningStats<double>::make(cout);
  auto xa = ga.leaf(x, true), wa = ga.leaf(w, true), ba = ga.leaf(b, true),
       gga = ga.leaf(gamma, true), gba = ga.leaf(beta, true);
  ga.backward(ga.sum_all(ga.sa_tail(xa, wa, ba, gga, gba, &sa, Mode::train)));

  Graph<double> gb;
  RunningStats<double> sb = RunningStats<double>::make(cout);
  auto xb = gb.leaf(x, true), wb = gb.leaf(w, true), bb = gb.leaf(b, true),
       ggb = gb.leaf(gamma, true), gbb = gb.leaf(beta, true);
  auto zb = gb.linear(xb, wb, bb);
  auto ab = gb.relu(gb.batch_norm(zb, ggb, gbb, &sb, Mode::train));
  auto [refb, amb] = gb.max_over_axis(ab, 1);
  gb.backward(gb.sum_all(refb));

  CHECK(oracles::max_abs_diff(ga.grad(xa).values(), gb.grad(xb).values()) < 1e-9);
  CHECK(oracles::max_abs_diff(ga.grad(wa).values(), gb.grad(wb).values()) < 1e-9);
  CHECK(oracles::max_abs_diff(ga.grad(ba).values(), gb.grad(bb).values()) < 1e-9);
  CHECK(oracles::max_abs_diff(ga.grad(gga).values(), gb.grad(ggb).values()) < 1e-9);
  CHECK(oracles::max_abs_diff(ga.grad(gba).values(), gb.grad(gbb).values()) < 1e-9);
}

TEST_CASE("sa_tail gradients match finite differences") {
  const std::int64_t regions = 3, S = 4, cin = 3, cout = 5;
  auto x = random_tensor({regions, S, cin}, 121);
  auto w = random_tensor({cin, cout}, 122);
  auto b = random_tensor({cout}, 123);
  auto gamma = random_tensor({cout}, 124, 0.5, 1.5);
  auto beta = random_tensor({cout}, 125);

  auto eval = [&]() {
    Graph<double> gg;
    RunningStats<double> st = RunningStats<double>::make(cout);
    auto o = gg.sa_tail(gg.leaf(x, true), gg.leaf(w, true), gg.leaf(b, true),
                        gg.leaf(gamma, true), gg.leaf(beta, true), &st, Mode::train);
    double acc = 0;
    for (double v : o.values()) acc += v;
    return acc;
  };
  Graph<double> g;
  RunningStats<double> st = RunningStats<double>::make(cout);
  auto xl = g.leaf(x, true), wl = g.leaf(w, true), bl = g.leaf(b, true),
       gl = g.leaf(gamma, true), bel = g.leaf(beta, true);
  g.backward(g.sum_all(g.sa_tail(xl, wl, bl, gl, bel, &st, Mode::train)));
  CHECK(check_gradient(eval, x, g.grad(xl), 1e-4, 1e-6).pass);
  CHECK(check_gradient(eval, w, g.grad(wl), 1e-4, 1e-6).pass);
  CHECK(check_gradient(eval, gamma, g.grad(gl), 1e-4, 1e-6).pass);
  CHECK(check_gradient(eval, beta, g.grad(bel), 1e-4, 1e-6).pass);
}

TEST_CASE("graph replay determinism: identical inputs give bit-identical results") {
  auto run = [](std::uint64_t seed) {
    auto x = random_tensor({32, 8}, seed);
    auto w = random_tensor({8, 16}, seed + 1);
    auto b = random_tensor({16}, seed + 2);
    auto gamma = Tensor<double>::full({16}, 1.0);
    auto beta = Tensor<double>::zeros({16});
    Graph<double> g;
    RunningStats<double> st = RunningStats<double>::make(16);
    auto xl = g.leaf(x, true), wl = g.leaf(w, true);
    auto out = g.bn_relu(g.linear(xl, wl, b), gamma, beta, &st, Mode::train);
    auto loss = g.sum_all(out);
    g.backward(loss);
    std::vector<double> result(out.values().begin(), out.values().end());
    auto gw = g.grad(wl);
    result.insert(result.end(), gw.values().begin(), gw.values().end());
    result.push_back(loss.item());
    return result;
  };
  auto a = run(7), b = run(7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("tensor invariants: shape/data consistency and detached tensors") {
  CHECK_THROWS_AS((void)Tensor<double>::from({2, 2}, {1, 2, 3}), DimensionError&);
  CHECK_THROWS_AS((void)Tensor<double>::zeros({0, 2}), DimensionError&);

  // a tensor never registered as requiring grad gets no gradient
  Graph<double> g;
  auto x = random_tensor({2, 2}, 131);
  auto w = random_tensor({2, 2}, 132);
  auto wl = g.leaf(w, true);
  auto y = g.linear(x, wl);  // x auto-attached without grad
  g.backward(g.sum_all(y));
  CHECK(g.has_grad(wl));
  CHECK_FALSE(g.has_grad(x));
}
