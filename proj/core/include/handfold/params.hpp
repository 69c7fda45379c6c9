#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "handfold/graph.hpp"
#include "handfold/tensor.hpp"

namespace handfold {

// Named registry of learnable tensors and batch-norm state buffers.
// Registration order is stable and defines both the checkpoint layout and
// the weight-init RNG consumption order. Entries share storage with the
// layer objects, so in-place optimizer updates are visible everywhere.
template <typename R>
class ParamStore {
 public:
  // Returns a shallow copy sharing the stored buffer; references into the
  // registry would dangle as it grows.
  Tensor<R> add(const std::string& name, Tensor<R> value) {
    if (index_.count(name)) throw GraphError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back({name, std::move(value)});
    return params_.back().value;
  }

  void add_buffer(const std::string& name, Tensor<R> value) {
    if (buffer_index_.count(name)) throw GraphError("duplicate buffer name: " + name);
    buffer_index_.emplace(name, buffers_.size());
    buffers_.push_back({name, std::move(value)});
  }

  struct Entry {
    std::string name;
    Tensor<R> value;
  };

  Tensor<R>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw GraphError("unknown parameter: " + name);
    return params_[it->second].value;
  }

  const std::vector<Entry>& params() const { return params_; }
  const std::vector<Entry>& buffers() const { return buffers_; }
  std::vector<Entry>& mutable_params() { return params_; }
  std::vector<Entry>& mutable_buffers() { return buffers_; }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& e : params_) n += e.value.numel();
    return n;
  }

  // Registers every parameter as a trainable graph leaf.
  void attach_all(Graph<R>& g) const {
    for (const auto& e : params_) g.leaf(e.value, /*requires_grad=*/true);
  }

 private:
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::size_t> buffer_index_;
};

// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename R>
Tensor<R> uniform_init(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor<R>::uniform(std::move(shape), static_cast<R>(-bound), static_cast<R>(bound),
                            rng);
}

}  // namespace handfold
