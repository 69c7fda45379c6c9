#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "handfold/params.hpp"

namespace handfold {

// Adam with bias correction. First and second moments are kept per
// parameter, in registration order, and are part of the checkpoint state.
template <typename R>
class Adam {
 public:
  struct Config {
    R lr = R(1e-3);
    R beta1 = R(0.5);
    R beta2 = R(0.999);
    R eps = R(1e-8);
  };

  Adam() = default;
  Adam(const ParamStore<R>& store, Config cfg) : cfg_(cfg) {
    for (const auto& e : store.params()) {
      m_.push_back(Tensor<R>::zeros(e.value.shape()));
      v_.push_back(Tensor<R>::zeros(e.value.shape()));
    }
  }

  Config& config() { return cfg_; }
  const Config& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  std::vector<Tensor<R>>& first_moments() { return m_; }
  std::vector<Tensor<R>>& second_moments() { return v_; }

  // One update over every parameter; parameters without a recorded gradient
  // are treated as having a zero gradient. A non-finite gradient aborts with
  // the offending parameter named.
  void step(ParamStore<R>& store, const Graph<R>& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    auto& entries = store.mutable_params();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Tensor<R>& param = entries[p].value;
      const bool has = g.has_grad(param);
      const Tensor<R>* grad = has ? &g.grad(param) : nullptr;
      auto mv = m_[p].values();
      auto vv = v_[p].values();
      auto pv = param.values();
      for (std::int64_t i = 0; i < param.numel(); ++i) {
        const R gi = grad ? (*grad)[i] : R(0);
        if (!std::isfinite(static_cast<double>(gi))) {
          throw Error("NaN gradient in parameter '" + entries[p].name + "' at entry " +
                      std::to_string(i) + " (step " + std::to_string(t_) + ")");
        }
        mv[i] = cfg_.beta1 * mv[i] + (R(1) - cfg_.beta1) * gi;
        vv[i] = cfg_.beta2 * vv[i] + (R(1) - cfg_.beta2) * gi * gi;
        const double mhat = static_cast<double>(mv[i]) / bc1;
        const double vhat = static_cast<double>(vv[i]) / bc2;
        pv[i] -= static_cast<R>(static_cast<double>(cfg_.lr) * mhat /
                                (std::sqrt(vhat) + static_cast<double>(cfg_.eps)));
      }
    }
  }

 private:
  Config cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor<R>> m_, v_;
};

}  // namespace handfold
