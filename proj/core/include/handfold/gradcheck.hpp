#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace handfold {

// Central finite-difference verification of every differentiable operation
// and of the full pipeline (encoder -> global fold -> local fold -> loss),
// all in 64-bit precision.
struct GradCheckEntry {
  std::string name;
  double max_err = 0;        // worst |analytic - numeric| / scale
  std::int64_t checked = 0;  // compared entries
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> operators;  // one entry per registered op
  GradCheckEntry pipeline;
  bool all_pass = false;
};

// `negative_control` deliberately perturbs one analytic pipeline gradient
// before comparison; the report must then show a failure.
GradCheckReport run_gradcheck(std::uint64_t seed, bool negative_control = false);

}  // namespace handfold
