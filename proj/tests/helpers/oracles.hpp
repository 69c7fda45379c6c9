#pragma once

// Test-side oracles. The finite-difference checker here is intentionally
// independent of the library's own gradcheck module: it only drives public
// forward evaluations and perturbs raw buffers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "handfold/tensor.hpp"

namespace oracles {

// Pass criterion: |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|).
struct FdReport {
  double max_err = 0.0;      // worst |a - n| / scale
  std::int64_t checked = 0;
  bool pass = true;
  std::string worst;
};

inline bool fd_close(double analytic, double numeric, double rtol, double atol) {
  return std::abs(analytic - numeric) <=
         atol + rtol * std::max(std::abs(analytic), std::abs(numeric));
}

// Central difference of a scalar-valued closure w.r.t. one buffer slot.
template <typename F>
double central_diff(F&& eval, double* slot, double step = 1e-3) {
  const double orig = *slot;
  *slot = orig + step;
  const double fp = eval();
  *slot = orig - step;
  const double fm = eval();
  *slot = orig;
  return (fp - fm) / (2.0 * step);
}

// Checks d(eval)/d(param[i]) against analytic[i] for every (or a sampled
// subset of) entries. `eval` must rebuild its graph from the current buffer
// contents on every call.
template <typename F>
FdReport check_gradient(F&& eval, handfold::Tensor<double>& param,
                        const handfold::Tensor<double>& analytic, double rtol = 1e-4,
                        double atol = 1e-7, double step = 1e-3,
                        std::int64_t max_checks = -1, std::uint64_t seed = 0) {
  FdReport rep;
  std::vector<std::int64_t> order(static_cast<std::size_t>(param.numel()));
  for (std::int64_t i = 0; i < param.numel(); ++i) order[static_cast<std::size_t>(i)] = i;
  if (max_checks > 0 && max_checks < param.numel()) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(max_checks));
  }
  for (std::int64_t i : order) {
    const double numeric = central_diff(eval, &param[i], step);
    const double a = analytic[i];
    const double scale = std::max({std::abs(a), std::abs(numeric), atol / rtol});
    const double err = std::abs(a - numeric) / scale;
    ++rep.checked;
    if (err > rep.max_err) {
      rep.max_err = err;
      rep.worst = "entry " + std::to_string(i) + ": analytic=" + std::to_string(a) +
                  " numeric=" + std::to_string(numeric);
    }
    if (!fd_close(a, numeric, rtol, atol)) rep.pass = false;
  }
  return rep;
}

inline handfold::Tensor<double> random_tensor(handfold::Shape shape, std::uint64_t seed,
                                              double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return handfold::Tensor<double>::uniform(std::move(shape), lo, hi, rng);
}

// Random tensor whose entries keep a margin away from zero (relu kink).
inline handfold::Tensor<double> random_tensor_away_from_zero(handfold::Shape shape,
                                                             std::uint64_t seed,
                                                             double margin = 1e-2) {
  auto t = random_tensor(std::move(shape), seed, -1.0, 1.0);
  for (auto& v : t.values()) {
    if (std::abs(v) < margin + 0.05) v = v < 0 ? v - (margin + 0.05) : v + margin + 0.05;
  }
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracles
