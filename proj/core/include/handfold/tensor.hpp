#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "handfold/common.hpp"

namespace handfold {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// Dense row-major tensor. Copies are shallow (data is shared); `node()`
// identifies the producing node when the tensor is attached to a Graph.
template <typename R>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    t.data_ = std::make_shared<std::vector<R>>(static_cast<std::size_t>(shape_numel(t.shape_)),
                                               R(0));
    return t;
  }

  static Tensor full(Shape shape, R value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.values()) v = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<R> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    if (static_cast<std::int64_t>(data.size()) != shape_numel(t.shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(t.shape_));
    }
    t.data_ = std::make_shared<std::vector<R>>(std::move(data));
    return t;
  }

  static Tensor scalar(R value) { return from({1}, {value}); }

  static Tensor uniform(Shape shape, R lo, R hi, std::mt19937_64& rng) {
    Tensor t = zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    for (auto& v : t.values()) v = static_cast<R>(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  // Size of the last axis (channel count for most ops).
  std::int64_t channels() const { return shape_.empty() ? 1 : shape_.back(); }
  std::int64_t rows() const { return channels() ? numel() / channels() : 0; }

  std::span<R> values() { return {data_->data(), data_->size()}; }
  std::span<const R> values() const { return {data_->data(), data_->size()}; }
  R* data() { return data_->data(); }
  const R* data() const { return data_->data(); }

  R& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  const R& operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  R item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }

  // Identity of the underlying buffer; used to recognize leaf re-registration.
  const void* buffer_id() const { return static_cast<const void*>(data_.get()); }

  std::int64_t node() const { return node_; }
  bool attached() const { return node_ >= 0; }
  Tensor with_node(std::int64_t id) const {
    Tensor t = *this;
    t.node_ = id;
    return t;
  }
  Tensor detached() const { return with_node(-1); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel()) {
      throw DimensionError("cannot view " + shape_str(shape_) + " as " + shape_str(s));
    }
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    if (data_) t.data_ = std::make_shared<std::vector<R>>(*data_);
    return t;
  }

  void release() { data_.reset(); }

  template <typename S>
  Tensor<S> cast() const {
    std::vector<S> out(static_cast<std::size_t>(numel()));
    auto v = values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(v[i]);
    return Tensor<S>::from(shape_, std::move(out));
  }

 private:
  void validate_shape() const {
    for (auto e : shape_) {
      if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::shared_ptr<std::vector<R>> data_;
  std::int64_t node_ = -1;
};

// Integer index tensor used by gather/grouping ops; never differentiated.
class IndexTensor {
 public:
  IndexTensor() = default;
  IndexTensor(Shape shape, std::vector<std::int32_t> idx)
      : shape_(std::move(shape)), idx_(std::move(idx)) {
    if (static_cast<std::int64_t>(idx_.size()) != shape_numel(shape_)) {
      throw DimensionError("index data does not match shape " + shape_str(shape_));
    }
  }
  static IndexTensor from(std::vector<std::int32_t> idx) {
    Shape s{static_cast<std::int64_t>(idx.size())};
    return IndexTensor(std::move(s), std::move(idx));
  }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(idx_.size()); }
  std::span<const std::int32_t> values() const { return idx_; }
  std::span<std::int32_t> values() { return idx_; }
  std::int32_t operator[](std::int64_t i) const { return idx_[static_cast<std::size_t>(i)]; }

 private:
  Shape shape_;
  std::vector<std::int32_t> idx_;
};

}  // namespace handfold
