#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "handfold/augment.hpp"
#include "handfold/synth.hpp"
#include "handfold/training.hpp"

using namespace handfold;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "handfold_train_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

TrainConfig small_config(int epochs, int batch, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch = batch;
  cfg.seed = seed;
  cfg.checkpoint_every = 2;
  cfg.model.joints = 16;
  cfg.model.local_folds = 1;
  cfg.model.points = 1024;
  return cfg;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParamStore<float> store;
  std::mt19937_64 rng(3);
  auto touched = store.add("a", Tensor<float>::uniform({4}, -1, 1, rng));
  auto untouched = store.add("b", Tensor<float>::uniform({4}, -1, 1, rng));
  auto before = untouched.clone();
  auto touched_before = touched.clone();

  Adam<float> adam(store, {});
  Graph<float> g;
  store.attach_all(g);
  // loss = sum(a - a): every gradient is exactly zero
  g.backward(g.sum_all(g.sub(g.leaf(touched, true), g.leaf(touched, true))));
  adam.step(store, g);

  for (int i = 0; i < 4; ++i) {
    CHECK(untouched[i] == before[i]);
    CHECK(touched[i] == touched_before[i]);
  }
}

TEST_CASE("adam: bias-corrected first step has magnitude about lr") {
  ParamStore<float> store;
  auto p = store.add("p", Tensor<float>::full({3}, 2.0f));
  typename Adam<float>::Config cfg;
  cfg.lr = 1e-3f;
  Adam<float> adam(store, cfg);

  Graph<float> g;
  g.backward(g.sum_all(g.leaf(p, true)));  // gradient = 1 everywhere
  adam.step(store, g);
  for (int i = 0; i < 3; ++i) {
    CHECK(p[i] == doctest::Approx(2.0 - 1e-3).epsilon(1e-4));
  }
}

TEST_CASE("adam: ten steps on a quadratic bowl decrease the objective monotonically") {
  ParamStore<double> store;
  std::mt19937_64 rng(5);
  auto x = store.add("x", Tensor<double>::uniform({6}, -2, 2, rng));
  auto target = Tensor<double>::uniform({6}, -0.5, 0.5, rng);

  typename Adam<double>::Config cfg;
  cfg.lr = 0.05;
  Adam<double> adam(store, cfg);

  // objective oracle: f(x) = sum (x - c)^2 / 2, recomputed independently
  auto objective = [&] {
    double acc = 0;
    for (int i = 0; i < 6; ++i) acc += 0.5 * (x[i] - target[i]) * (x[i] - target[i]);
    return acc;
  };

  double prev = objective();
  for (int step = 0; step < 10; ++step) {
    Graph<double> g;
    auto loss = g.smooth_l1_sum(g.sub(g.leaf(x, true), g.leaf(target, false)), 1e6,
                                SmoothL1Variant::huber);  // quadratic branch everywhere
    (void)loss;
    Graph<double> g2;
    auto xl = g2.leaf(x, true);
    // gradient of sum (x-c)^2/(2 delta) with delta=1 equals (x - c)
    g2.backward(g2.smooth_l1_sum(g2.sub(xl, g2.leaf(target, false)), 1.0,
                                 SmoothL1Variant::huber));
    adam.step(store, g2);
    const double now = objective();
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("augment: identity parameters reproduce the frame exactly") {
  auto frame = synth_hand(11);
  AugmentParams id;  // rotation 0, scale 1, translation 0
  auto out = apply_augment(frame, id);
  CHECK((out.points - frame.points).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.normals - frame.normals).cwiseAbs().maxCoeff() == 0.0);
  CHECK((*out.gt_joints - *frame.gt_joints).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("augment: points and joints share one similarity map") {
  auto frame = synth_hand(13);
  auto params = sample_augment(29);
  auto out = apply_augment(frame, params);

  // pairwise point-to-joint distances scale exactly by s
  for (int i = 0; i < 5; ++i) {
    const auto p0 = frame.points.row(i * 37);
    const auto j0 = frame.gt_joints->row(i % 16);
    const auto p1 = out.points.row(i * 37);
    const auto j1 = out.gt_joints->row(i % 16);
    const double before = (p0 - j0).norm();
    const double after = (p1 - j1).norm();
    CHECK(after == doctest::Approx(params.scale * before).epsilon(1e-12));
  }

  // normals only rotate: still unit length
  for (int i = 0; i < 64; ++i) {
    CHECK(std::abs(out.normals.row(i * 16).norm() - 1.0) < 1e-9);
  }

  // label consistency restated with the metric: transformed gt vs augmented gt
  PointMatrix mapped(frame.gt_joints->rows(), 3);
  const Mat3 rot = rotation_about_z(params.rotation_z_rad);
  const Vec3 t = params.translation_mm / frame.transform.scale;
  for (Eigen::Index i = 0; i < mapped.rows(); ++i) {
    mapped.row(i) =
        (params.scale * (rot * frame.gt_joints->row(i).transpose()) + t).transpose();
  }
  CHECK(mean_distance_error(mapped, *out.gt_joints) == 0.0);

  // fixed seed replay
  auto again = augment(frame, 777);
  auto once = augment(frame, 777);
  CHECK((again.points - once.points).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synth_hands: invariants, determinism, joints inside the cloud box") {
  auto frames = synth_hands(4, 99);
  REQUIRE(frames.size() == 4);
  for (const auto& f : frames) {
    f.validate();
    REQUIRE(f.gt_joints.has_value());
    CHECK(f.size() == 1024);
    // joints stay inside the normalized cloud's bounding box (small slack
    // because the box is measured on the subsampled cloud)
    Vec3 lo = f.points.colwise().minCoeff().transpose();
    Vec3 hi = f.points.colwise().maxCoeff().transpose();
    for (Eigen::Index j = 0; j < f.gt_joints->rows(); ++j) {
      for (int c = 0; c < 3; ++c) {
        CHECK(f.gt_joints->coeff(j, c) > lo[c] - 0.05);
        CHECK(f.gt_joints->coeff(j, c) < hi[c] + 0.05);
      }
    }
  }

  auto replay = synth_hands(4, 99);
  for (int i = 0; i < 4; ++i) {
    CHECK((frames[static_cast<std::size_t>(i)].points -
           replay[static_cast<std::size_t>(i)].points)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }

  // different joint conventions generate matching ground truth sizes
  SynthOptions msra;
  msra.joints = 21;
  CHECK(synth_hand(5, msra).gt_joints->rows() == 21);
  SynthOptions nyu;
  nyu.joints = 14;
  CHECK(synth_hand(5, nyu).gt_joints->rows() == 14);
}

TEST_CASE("train: epoch log length, determinism, checkpoint reload") {
  auto dataset = synth_hands(4, 1234);
  auto cfg = small_config(/*epochs=*/2, /*batch=*/2, /*seed=*/7);

  auto r1 = train(dataset, cfg, temp_dir("run1"));
  CHECK(r1.log.size() == 2);
  REQUIRE(fs::exists(r1.final_checkpoint));
  REQUIRE(fs::exists(r1.log_file));

  // same seed => identical epoch log (bitwise on the doubles)
  auto r2 = train(dataset, cfg, temp_dir("run2"));
  REQUIRE(r2.log.size() == r1.log.size());
  for (std::size_t e = 0; e < r1.log.size(); ++e) {
    CHECK(r1.log[e].loss_total == r2.log[e].loss_total);
    CHECK(r1.log[e].train_error_mm == r2.log[e].train_error_mm);
  }

  // different seed changes the trajectory
  auto cfg3 = cfg;
  cfg3.seed = 8;
  auto r3 = train(dataset, cfg3, temp_dir("run3"));
  CHECK(r3.log[0].loss_total != r1.log[0].loss_total);

  // checkpoint reload reproduces eval outputs bit-exactly
  auto loaded1 = load_checkpoint(r1.final_checkpoint);
  auto loaded2 = load_checkpoint(r2.final_checkpoint);
  auto e1 = evaluate(*loaded1.model, dataset);
  auto e2 = evaluate(*loaded2.model, dataset);
  CHECK(e1.mean_error_mm == e2.mean_error_mm);
}

TEST_CASE("train: resume reproduces the uninterrupted loss trajectory") {
  auto dataset = synth_hands(4, 555);
  auto cfg_full = small_config(/*epochs=*/4, /*batch=*/2, /*seed=*/21);
  auto full = train(dataset, cfg_full, temp_dir("full"));

  auto cfg_half = cfg_full;
  cfg_half.epochs = 2;
  auto half = train(dataset, cfg_half, temp_dir("half"));
  auto resumed = train(dataset, cfg_full, temp_dir("resumed"), &half.final_checkpoint);

  REQUIRE(full.log.size() == 4);
  REQUIRE(resumed.log.size() == 2);  // epochs 2 and 3
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(resumed.log[e].epoch == full.log[e + 2].epoch);
    CHECK(resumed.log[e].loss_total == doctest::Approx(full.log[e + 2].loss_total).epsilon(1e-12));
  }
}

TEST_CASE("train: multi-worker batch preparation changes nothing") {
  auto dataset = synth_hands(4, 77);
  auto cfg = small_config(/*epochs=*/1, /*batch=*/2, /*seed=*/3);
  auto base = train(dataset, cfg, temp_dir("w1"));
  cfg.workers = 3;
  auto pooled = train(dataset, cfg, temp_dir("w3"));
  CHECK(base.log[0].loss_total == pooled.log[0].loss_total);
  CHECK(base.log[0].train_error_mm == pooled.log[0].train_error_mm);
}

TEST_CASE("checkpoint: corrupt magic raises a format error") {
  auto dir = temp_dir("bad");
  const std::string path = dir + "/bad.hfld";
  std::ofstream out(path, std::ios::binary);
  out << "NOPE----garbage";
  out.close();
  CHECK_THROWS_AS((void)load_checkpoint(path), FormatError&);
}

TEST_CASE("evaluate: identical checkpoint evaluated twice gives identical reports") {
  auto dataset = synth_hands(3, 31);
  auto cfg = small_config(1, 2, 5);
  auto run = train(dataset, cfg, temp_dir("eval"));
  auto loaded = load_checkpoint(run.final_checkpoint);
  auto a = evaluate(*loaded.model, dataset);
  auto b = evaluate(*loaded.model, dataset);
  REQUIRE(a.per_frame_mm.size() == b.per_frame_mm.size());
  for (std::size_t i = 0; i < a.per_frame_mm.size(); ++i) {
    CHECK(a.per_frame_mm[i] == b.per_frame_mm[i]);
  }
}
