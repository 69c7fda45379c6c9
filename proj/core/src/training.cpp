#include "handfold/training.hpp"

#include "handfold/augment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace handfold {

namespace fs = std::filesystem;

namespace {

// Bounded queue delivering batches in index order regardless of which worker
// finished first; keeps consumption deterministic.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(std::size_t index, std::vector<PointFrame> batch) {
    std::unique_lock lock(mu_);
    cv_push_.wait(lock, [&] { return ready_.size() < capacity_ || index == next_; });
    ready_.emplace(index, std::move(batch));
    cv_pop_.notify_all();
  }

  std::vector<PointFrame> pop() {
    std::unique_lock lock(mu_);
    cv_pop_.wait(lock, [&] { return ready_.count(next_) > 0; });
    auto batch = std::move(ready_.at(next_));
    ready_.erase(next_);
    ++next_;
    cv_push_.notify_all();
    return batch;
  }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::map<std::size_t, std::vector<PointFrame>> ready_;
  std::mutex mu_;
  std::condition_variable cv_push_, cv_pop_;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x0D0E, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void write_log_file(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write training log: " + path);
  out << "epoch,loss_total";
  if (!log.empty()) {
    for (std::size_t s = 0; s < log.front().loss_stages.size(); ++s) out << ",loss_stage" << s;
  }
  out << ",train_error_mm\n";
  char buf[64];
  for (const auto& e : log) {
    out << e.epoch;
    std::snprintf(buf, sizeof(buf), ",%.9g", e.loss_total);
    out << buf;
    for (double s : e.loss_stages) {
      std::snprintf(buf, sizeof(buf), ",%.9g", s);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.9g\n", e.train_error_mm);
    out << buf;
  }
}

}  // namespace

TrainResult train(const std::vector<PointFrame>& dataset, const TrainConfig& cfg,
                  const std::string& out_dir, const std::string* resume_checkpoint,
                  const SkeletonPrior* skeleton_override) {
  cfg.validate();
  if (dataset.empty()) throw EmptyFrameError("training needs a non-empty dataset");
  for (const auto& f : dataset) {
    if (!f.gt_joints) throw DimensionError("training frames need ground-truth joints");
    if (f.gt_joints->rows() != cfg.model.joints) {
      throw DimensionError("frame ground truth has " + std::to_string(f.gt_joints->rows()) +
                           " joints, config expects " + std::to_string(cfg.model.joints));
    }
  }
  fs::create_directories(out_dir);

  // Model: resumed from a checkpoint, or freshly built with a skeleton from
  // the training ground truths (cached next to the checkpoints).
  std::unique_ptr<HandFoldingNet<float>> model;
  std::unique_ptr<Adam<float>> adam;
  int start_epoch = 0;
  if (resume_checkpoint) {
    LoadedCheckpoint loaded = load_checkpoint(*resume_checkpoint);
    model = std::move(loaded.model);
    adam = std::move(loaded.optimizer);
    start_epoch = static_cast<int>(loaded.meta.epoch);
  } else {
    SkeletonPrior skel;
    if (skeleton_override) {
      skel = *skeleton_override;
    } else {
      std::vector<PointMatrix> gts;
      gts.reserve(dataset.size());
      for (const auto& f : dataset) gts.push_back(*f.gt_joints);
      skel = build_skeleton(gts, KinematicChain::for_joint_count(cfg.model.joints),
                            derive_seed(cfg.seed, 0x5CE7));
      save_skeleton((fs::path(out_dir) / "skeleton.skel").string(), skel);
    }
    auto adj = build_adjacency(KinematicChain::for_joint_count(cfg.model.joints));
    save_adjacency((fs::path(out_dir) / "skeleton.adj").string(), adj, skel.joint_names);
    model = std::make_unique<HandFoldingNet<float>>(cfg.model, skel, adj,
                                                    derive_seed(cfg.seed, 0x1217));
    typename Adam<float>::Config acfg;
    acfg.lr = static_cast<float>(cfg.lr);
    acfg.beta1 = static_cast<float>(cfg.beta1);
    acfg.beta2 = static_cast<float>(cfg.beta2);
    adam = std::make_unique<Adam<float>>(model->params(), acfg);
  }

  const std::size_t n = dataset.size();
  const std::size_t batches_per_epoch = (n + static_cast<std::size_t>(cfg.batch) - 1) /
                                        static_cast<std::size_t>(cfg.batch);

  TrainResult result;
  double best_error = std::numeric_limits<double>::infinity();
  auto ckpt_path = [&](const std::string& stem) {
    return (fs::path(out_dir) / (stem + ".hfld")).string();
  };
  auto save = [&](const std::string& stem, int epoch) {
    CheckpointMeta meta;
    meta.epoch = epoch;
    meta.base_seed = cfg.seed;
    meta.model = cfg.model;
    save_checkpoint(ckpt_path(stem), *model, meta, adam.get());
    return ckpt_path(stem);
  };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    if (cfg.lr_decay_epoch >= 0 && epoch == cfg.lr_decay_epoch) {
      adam->config().lr *= static_cast<float>(cfg.lr_decay_factor);
    }
    auto order = epoch_order(n, cfg.seed, epoch);

    // Worker pool: each worker prepares whole batches (augmentation) and
    // feeds a bounded queue; per-frame RNG streams are derived from
    // (seed, epoch, dataset index), so scheduling cannot change the data.
    BatchQueue queue(2);
    std::vector<std::thread> workers;
    const int n_workers = std::max(1, cfg.workers);
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t b = static_cast<std::size_t>(w); b < batches_per_epoch;
             b += static_cast<std::size_t>(n_workers)) {
          const std::size_t begin = b * static_cast<std::size_t>(cfg.batch);
          const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch));
          std::vector<PointFrame> batch;
          batch.reserve(end - begin);
          for (std::size_t i = begin; i < end; ++i) {
            const std::size_t src = order[i];
            if (cfg.augment) {
              batch.push_back(augment(dataset[src],
                                       derive_seed(cfg.seed, 0xA06,
                                                   static_cast<std::uint64_t>(epoch), src)));
            } else {
              batch.push_back(dataset[src]);
            }
          }
          queue.push(b, std::move(batch));
        }
      });
    }

    EpochLog log;
    log.epoch = epoch;
    double err_acc = 0;
    std::size_t err_frames = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<PointFrame> batch = queue.pop();
      Graph<float> g;
      auto fwd = model->forward(g, batch, Mode::train,
                                derive_seed(cfg.seed, 0xF0D, static_cast<std::uint64_t>(epoch),
                                            static_cast<std::uint64_t>(b)));

      const std::int64_t j = cfg.model.joints;
      Tensor<float> gt = Tensor<float>::zeros({fwd.batch * j, 3});
      for (std::int64_t f = 0; f < fwd.batch; ++f) {
        const auto& gjoints = *batch[static_cast<std::size_t>(f)].gt_joints;
        for (std::int64_t k = 0; k < j; ++k)
          for (int c = 0; c < 3; ++c)
            gt[(f * j + k) * 3 + c] = static_cast<float>(gjoints(k, c));
      }
      auto loss = joint_loss_graph(g, fwd.stage_joints, g.leaf(gt, false), fwd.batch,
                                   static_cast<float>(cfg.loss_delta), cfg.model.loss_variant);
      const double loss_value = static_cast<double>(loss.total.item());
      if (!std::isfinite(loss_value)) {
        write_log_file((fs::path(out_dir) / "train_log.csv").string(), result.log);
        throw Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                    ", batch " + std::to_string(b) + "; last periodic checkpoint retained");
      }
      g.backward(loss.total);
      adam->step(model->params(), g);

      log.loss_total += loss_value;
      if (log.loss_stages.empty()) log.loss_stages.assign(loss.stages.size(), 0.0);
      for (std::size_t s = 0; s < loss.stages.size(); ++s) {
        log.loss_stages[s] += static_cast<double>(loss.stages[s].item());
      }
      // Final-stage training error in mm, reusing the train-mode forward.
      for (std::int64_t f = 0; f < fwd.batch; ++f) {
        const auto& frame = batch[static_cast<std::size_t>(f)];
        PointMatrix pred(j, 3);
        const auto& final_stage = fwd.stage_joints.back();
        for (std::int64_t k = 0; k < j; ++k)
          for (int c = 0; c < 3; ++c)
            pred(k, c) = static_cast<double>(final_stage[(f * j + k) * 3 + c]);
        err_acc += mean_distance_error(denormalize_joints(pred, frame.transform),
                                       denormalize_joints(*frame.gt_joints, frame.transform));
        ++err_frames;
      }
    }
    for (auto& t : workers) t.join();

    log.loss_total /= static_cast<double>(batches_per_epoch);
    for (auto& s : log.loss_stages) s /= static_cast<double>(batches_per_epoch);
    log.train_error_mm = err_acc / static_cast<double>(err_frames);
    result.log.push_back(log);

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save("epoch_" + std::to_string(epoch + 1), epoch + 1);
    }
    if (log.train_error_mm < best_error) {
      best_error = log.train_error_mm;
      result.best_checkpoint = save("best", epoch + 1);
    }
  }

  result.final_checkpoint = save("final", cfg.epochs);
  if (result.best_checkpoint.empty()) result.best_checkpoint = result.final_checkpoint;
  result.log_file = (fs::path(out_dir) / "train_log.csv").string();
  write_log_file(result.log_file, result.log);
  return result;
}

EvalResult evaluate(HandFoldingNet<float>& model, const std::vector<PointFrame>& frames,
                    int batch) {
  if (frames.empty()) throw EmptyFrameError("evaluation needs at least one frame");
  const std::int64_t j = model.config().joints;
  EvalResult out;
  out.per_joint_mm.assign(static_cast<std::size_t>(j), 0.0);
  for (std::size_t begin = 0; begin < frames.size(); begin += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(frames.size(), begin + static_cast<std::size_t>(batch));
    std::span<const PointFrame> view(frames.data() + begin, end - begin);
    Graph<float> g;
    auto fwd = model.forward(g, view, Mode::eval, derive_seed(0xE7A1, begin));
    for (std::size_t f = 0; f < view.size(); ++f) {
      const auto& frame = view[f];
      if (!frame.gt_joints) throw DimensionError("evaluation frames need ground truth");
      auto pose = model.to_pose(fwd, static_cast<std::int64_t>(f));
      PointMatrix pred_mm = denormalize_joints(pose.final_joints(), frame.transform);
      PointMatrix gt_mm = denormalize_joints(*frame.gt_joints, frame.transform);
      auto dists = joint_distances(pred_mm, gt_mm);
      double mean = 0;
      for (std::size_t k = 0; k < dists.size(); ++k) {
        out.per_joint_mm[k] += dists[k];
        mean += dists[k];
      }
      out.per_frame_mm.push_back(mean / static_cast<double>(j));
    }
  }
  for (auto& v : out.per_joint_mm) v /= static_cast<double>(frames.size());
  double acc = 0;
  for (double v : out.per_frame_mm) acc += v;
  out.mean_error_mm = acc / static_cast<double>(out.per_frame_mm.size());
  return out;
}

}  // namespace handfold
