#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "handfold/adam.hpp"
#include "handfold/model.hpp"

namespace handfold {

// Checkpoint file: magic "HFLD", u32 version, u64 header length, JSON header
// (config, skeleton, tensor names and shapes), then raw little-endian f32
// payloads in header order. Reloading on the same build reproduces forward
// outputs bit-exactly.
struct CheckpointMeta {
  std::uint32_t version = 1;
  std::int64_t epoch = 0;
  std::uint64_t base_seed = 0;
  ModelConfig model;
  bool has_optimizer = false;
  std::int64_t adam_step = 0;
};

void save_checkpoint(const std::string& path, const HandFoldingNet<float>& model,
                     const CheckpointMeta& meta, const Adam<float>* optimizer = nullptr);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::unique_ptr<HandFoldingNet<float>> model;
  std::unique_ptr<Adam<float>> optimizer;  // present when stored
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace handfold
