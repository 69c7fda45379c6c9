#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "handfold/detail/gemm.hpp"
#include "handfold/parallel.hpp"
#include "handfold/tensor.hpp"

namespace handfold {

enum class Mode { train, eval };

enum class SmoothL1Variant { paper, huber };

// Per-channel running statistics for batch normalization.
template <typename R>
struct RunningStats {
  Tensor<R> mean;
  Tensor<R> var;

  static RunningStats make(std::int64_t channels) {
    return {Tensor<R>::zeros({channels}), Tensor<R>::full({channels}, R(1))};
  }
  bool defined() const { return mean.defined(); }
};

enum class OpKind {
  leaf,
  linear,
  relu,
  batch_norm,
  bn_relu,
  sa_tail,
  concat_last,
  max_over_axis,
  gather_rows,
  add,
  sub,
  replicate,
  reshape,
  sum_all,
  scale,
  smooth_l1_sum,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::linear: return "linear";
    case OpKind::relu: return "relu";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::bn_relu: return "bn_relu";
    case OpKind::sa_tail: return "sa_tail";
    case OpKind::concat_last: return "concat_last";
    case OpKind::max_over_axis: return "max_over_axis";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::replicate: return "replicate";
    case OpKind::reshape: return "reshape";
    case OpKind::sum_all: return "sum_all";
    case OpKind::scale: return "scale";
    case OpKind::smooth_l1_sum: return "smooth_l1_sum";
  }
  return "?";
}

// Every differentiable operation of the engine, in a stable order.
inline constexpr std::array<OpKind, 15> kDifferentiableOps = {
    OpKind::linear,     OpKind::relu,        OpKind::batch_norm, OpKind::bn_relu,
    OpKind::sa_tail,    OpKind::concat_last, OpKind::max_over_axis, OpKind::gather_rows,
    OpKind::add,        OpKind::sub,         OpKind::replicate,  OpKind::reshape,
    OpKind::sum_all,    OpKind::scale,       OpKind::smooth_l1_sum,
};

// Define-by-run reverse-mode graph. Nodes are appended in evaluation order
// (so append order is a topological order) and swept once, in reverse, by
// backward(). The graph is meant to be rebuilt for every forward pass.
template <typename R>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ---- graph construction -------------------------------------------------

  Tensor<R> leaf(const Tensor<R>& t, bool requires_grad) {
    if (!t.defined()) throw GraphError("leaf() on undefined tensor");
    auto it = by_buffer_.find(t.buffer_id());
    if (it != by_buffer_.end()) {
      Node& n = nodes_[static_cast<std::size_t>(it->second)];
      n.needs_grad = n.needs_grad || requires_grad;
      return t.with_node(it->second);
    }
    std::int64_t id = new_node(OpKind::leaf, t.detached(), requires_grad);
    by_buffer_.emplace(t.buffer_id(), id);
    return t.with_node(id);
  }

  // y[..., o] = sum_i x[..., i] * W[i, o] + b[o]; b may be undefined.
  Tensor<R> linear(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& b = {}) {
    Tensor<R> xt = attach(x), wt = attach(w), bt = b.defined() ? attach(b) : Tensor<R>{};
    if (wt.rank() != 2) throw DimensionError("linear: weight must be rank 2, got " + shape_str(wt.shape()));
    const std::int64_t cin = wt.extent(0), cout = wt.extent(1);
    if (xt.channels() != cin) {
      throw DimensionError("linear: input " + shape_str(xt.shape()) + " incompatible with weight " +
                           shape_str(wt.shape()));
    }
    if (bt.defined() && (bt.rank() != 1 || bt.extent(0) != cout)) {
      throw DimensionError("linear: bias " + shape_str(bt.shape()) + " incompatible with weight " +
                           shape_str(wt.shape()));
    }
    Shape out_shape = xt.shape();
    out_shape.back() = cout;
    Tensor<R> y = Tensor<R>::zeros(out_shape);
    const std::int64_t rows = xt.rows();
    detail::gemm_bias(xt.data(), rows, cin, wt.data(), cout, bt.defined() ? bt.data() : nullptr,
                      y.data());

    std::int64_t xid = xt.node(), wid = wt.node(), bid = bt.defined() ? bt.node() : -1;
    return make_op(OpKind::linear, y, {xid, wid, bid},
                   [xid, wid, bid, rows, cin, cout](Graph& g, const Tensor<R>& gy) {
                     const Tensor<R>& xv = g.value_of(xid);
                     const Tensor<R>& wv = g.value_of(wid);
                     const bool want_db = bid >= 0 && g.wants_grad(bid);
                     if (g.wants_grad(wid) || want_db) {
                       Tensor<R> dw = Tensor<R>::zeros(wv.shape());
                       Tensor<R> db = want_db ? Tensor<R>::zeros({cout}) : Tensor<R>{};
                       detail::gemm_grad_weights(xv.data(), gy.data(), rows, cin, cout, dw.data(),
                                                 db.defined() ? db.data() : nullptr);
                       g.accum(wid, std::move(dw));
                       if (want_db) g.accum(bid, std::move(db));
                     }
                     if (g.wants_grad(xid)) {
                       Tensor<R> dx = Tensor<R>::zeros(xv.shape());
                       detail::gemm_grad_input(gy.data(), rows, cout, wv.data(), cin, dx.data());
                       g.accum(xid, std::move(dx));
                     }
                   });
  }

  Tensor<R> relu(const Tensor<R>& x) {
    Tensor<R> xt = attach(x);
    Tensor<R> y = Tensor<R>::zeros(xt.shape());
    {
      auto xin = xt.values();
      auto out = y.values();
      parallel_chunks(xt.numel(), [&](std::int64_t i0, std::int64_t i1, int) {
        for (std::int64_t i = i0; i < i1; ++i) out[i] = xin[i] > R(0) ? xin[i] : R(0);
      });
    }
    std::int64_t xid = xt.node();
    return make_op(OpKind::relu, y, {xid}, [xid](Graph& g, const Tensor<R>& gy) {
      if (!g.wants_grad(xid)) return;
      const Tensor<R>& xv = g.value_of(xid);
      Tensor<R> dx = Tensor<R>::zeros(xv.shape());
      auto xin = xv.values();
      auto gv = gy.values();
      auto dv = dx.values();
      parallel_chunks(xv.numel(), [&](std::int64_t i0, std::int64_t i1, int) {
        for (std::int64_t i = i0; i < i1; ++i) dv[i] = xin[i] > R(0) ? gv[i] : R(0);
      });
      g.accum(xid, std::move(dx));
    });
  }

  Tensor<R> batch_norm(const Tensor<R>& x, const Tensor<R>& gamma, const Tensor<R>& beta,
                       RunningStats<R>* stats, Mode mode, R momentum = R(0.1),
                       R eps = R(1e-5)) {
    return norm_impl(x, gamma, beta, stats, mode, momentum, eps, /*fused_relu=*/false);
  }

  // batch_norm followed by relu, one materialized output instead of two.
  Tensor<R> bn_relu(const Tensor<R>& x, const Tensor<R>& gamma, const Tensor<R>& beta,
                    RunningStats<R>* stats, Mode mode, R momentum = R(0.1), R eps = R(1e-5)) {
    return norm_impl(x, gamma, beta, stats, mode, momentum, eps, /*fused_relu=*/true);
  }

  Tensor<R> concat_last(const std::vector<Tensor<R>>& xs) {
    if (xs.empty()) throw DimensionError("concat_last: empty input list");
    std::vector<Tensor<R>> at;
    at.reserve(xs.size());
    for (const auto& x : xs) at.push_back(attach(x));
    const std::int64_t rows = at[0].rows();
    Shape lead = at[0].shape();
    std::int64_t width = 0;
    for (const auto& x : at) {
      Shape xl = x.shape();
      xl.back() = 1;
      Shape l0 = lead;
      l0.back() = 1;
      if (xl != l0) {
        throw DimensionError("concat_last: leading shape mismatch " + shape_str(at[0].shape()) +
                             " vs " + shape_str(x.shape()));
      }
      width += x.channels();
    }
    Shape out_shape = lead;
    out_shape.back() = width;
    Tensor<R> y = Tensor<R>::zeros(out_shape);
    std::int64_t off = 0;
    for (const auto& x : at) {
      const std::int64_t c = x.channels();
      const R* src = x.data();
      R* dst = y.data() + off;
      parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
        for (std::int64_t r = r0; r < r1; ++r)
          std::copy_n(src + r * c, c, dst + r * width);
      });
      off += c;
    }
    std::vector<std::int64_t> ids;
    std::vector<std::int64_t> widths;
    for (const auto& x : at) {
      ids.push_back(x.node());
      widths.push_back(x.channels());
    }
    return make_op(OpKind::concat_last, y, ids,
                   [ids, widths, rows, width](Graph& g, const Tensor<R>& gy) {
                     std::int64_t off = 0;
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       const std::int64_t c = widths[k];
                       if (g.wants_grad(ids[k])) {
                         Tensor<R> dx = Tensor<R>::zeros(g.value_of(ids[k]).shape());
                         const R* src = gy.data() + off;
                         R* dst = dx.data();
                         parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
                           for (std::int64_t r = r0; r < r1; ++r)
                             std::copy_n(src + r * width, c, dst + r * c);
                         });
                         g.accum(ids[k], std::move(dx));
                       }
                       off += c;
                     }
                   });
  }

  // Max over one axis; gradient is routed to the argmax (lowest index wins ties).
  std::pair<Tensor<R>, IndexTensor> max_over_axis(const Tensor<R>& x, int axis) {
    Tensor<R> xt = attach(x);
    if (axis < 0) axis += xt.rank();
    if (axis < 0 || axis >= xt.rank()) throw DimensionError("max_over_axis: bad axis");
    Shape out_shape;
    for (int a = 0; a < xt.rank(); ++a)
      if (a != axis) out_shape.push_back(xt.extent(a));
    if (out_shape.empty()) out_shape.push_back(1);

    std::int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= xt.extent(a);
    for (int a = axis + 1; a < xt.rank(); ++a) inner *= xt.extent(a);
    const std::int64_t s_extent = xt.extent(axis);

    Tensor<R> y = Tensor<R>::zeros(out_shape);
    std::vector<std::int32_t> amax(static_cast<std::size_t>(outer * inner), 0);
    const R* xd = xt.data();
    R* yd = y.data();
    parallel_chunks(outer, [&](std::int64_t o0, std::int64_t o1, int) {
      for (std::int64_t o = o0; o < o1; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          R best = xd[(o * s_extent) * inner + i];
          std::int32_t bs = 0;
          for (std::int64_t s = 1; s < s_extent; ++s) {
            R v = xd[(o * s_extent + s) * inner + i];
            if (v > best) {
              best = v;
              bs = static_cast<std::int32_t>(s);
            }
          }
          yd[o * inner + i] = best;
          amax[static_cast<std::size_t>(o * inner + i)] = bs;
        }
      }
    });
    IndexTensor amax_t(out_shape, std::move(amax));
    auto amax_shared = std::make_shared<IndexTensor>(amax_t);
    std::int64_t xid = xt.node();
    Tensor<R> out = make_op(
        OpKind::max_over_axis, y, {xid},
        [xid, amax_shared, outer, inner, s_extent](Graph& g, const Tensor<R>& gy) {
          if (!g.wants_grad(xid)) return;
          Tensor<R> dx = Tensor<R>::zeros(g.value_of(xid).shape());
          const R* gv = gy.data();
          R* dv = dx.data();
          auto am = amax_shared->values();
          parallel_chunks(outer, [&](std::int64_t o0, std::int64_t o1, int) {
            for (std::int64_t o = o0; o < o1; ++o)
              for (std::int64_t i = 0; i < inner; ++i) {
                std::int64_t s = am[static_cast<std::size_t>(o * inner + i)];
                dv[(o * s_extent + s) * inner + i] = gv[o * inner + i];
              }
          });
          g.accum(xid, std::move(dx));
        });
    return {out, amax_t};
  }

  // out[k..., :] = x[idx[k...], :]; backward scatter-adds into duplicate rows.
  Tensor<R> gather_rows(const Tensor<R>& x, const IndexTensor& idx) {
    Tensor<R> xt = attach(x);
    if (xt.rank() != 2) throw DimensionError("gather_rows: source must be rank 2");
    const std::int64_t n = xt.extent(0), c = xt.extent(1), k = idx.numel();
    for (std::int64_t i = 0; i < k; ++i) {
      if (idx[i] < 0 || idx[i] >= n) {
        throw DimensionError("gather_rows: index " + std::to_string(idx[i]) +
                             " out of range [0," + std::to_string(n) + ")");
      }
    }
    Shape out_shape = idx.shape();
    out_shape.push_back(c);
    Tensor<R> y = Tensor<R>::zeros(out_shape);
    const R* xd = xt.data();
    R* yd = y.data();
    auto iv = idx.values();
    parallel_chunks(k, [&](std::int64_t i0, std::int64_t i1, int) {
      for (std::int64_t i = i0; i < i1; ++i)
        std::copy_n(xd + static_cast<std::int64_t>(iv[static_cast<std::size_t>(i)]) * c, c,
                    yd + i * c);
    });
    auto idx_shared = std::make_shared<IndexTensor>(idx);
    std::int64_t xid = xt.node();
    return make_op(OpKind::gather_rows, y, {xid},
                   [xid, idx_shared, c, k](Graph& g, const Tensor<R>& gy) {
                     if (!g.wants_grad(xid)) return;
                     Tensor<R> dx = Tensor<R>::zeros(g.value_of(xid).shape());
                     const R* gv = gy.data();
                     R* dv = dx.data();
                     auto iv = idx_shared->values();
                     for (std::int64_t i = 0; i < k; ++i) {
                       R* row = dv + static_cast<std::int64_t>(iv[static_cast<std::size_t>(i)]) * c;
                       const R* src = gv + i * c;
                       for (std::int64_t j = 0; j < c; ++j) row[j] += src[j];
                     }
                     g.accum(xid, std::move(dx));
                   });
  }

  Tensor<R> add(const Tensor<R>& a, const Tensor<R>& b) { return elementwise(a, b, OpKind::add); }
  Tensor<R> sub(const Tensor<R>& a, const Tensor<R>& b) { return elementwise(a, b, OpKind::sub); }

  // x[..., C] -> out[..., times, C]: the whole tensor repeated along a new
  // axis inserted before the channel axis. Backward sums over that axis.
  Tensor<R> replicate(const Tensor<R>& x, std::int64_t times) {
    Tensor<R> xt = attach(x);
    if (times < 1) throw DimensionError("replicate: times must be >= 1");
    const std::int64_t c = xt.channels(), rows = xt.rows();
    Shape out_shape = xt.shape();
    out_shape.insert(out_shape.end() - 1, times);
    Tensor<R> y = Tensor<R>::zeros(out_shape);
    const R* xd = xt.data();
    R* yd = y.data();
    parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
      for (std::int64_t r = r0; r < r1; ++r)
        for (std::int64_t t = 0; t < times; ++t)
          std::copy_n(xd + r * c, c, yd + (r * times + t) * c);
    });
    std::int64_t xid = xt.node();
    return make_op(OpKind::replicate, y, {xid},
                   [xid, times, c, rows](Graph& g, const Tensor<R>& gy) {
                     if (!g.wants_grad(xid)) return;
                     Tensor<R> dx = Tensor<R>::zeros(g.value_of(xid).shape());
                     const R* gv = gy.data();
                     R* dv = dx.data();
                     parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
                       for (std::int64_t r = r0; r < r1; ++r)
                         for (std::int64_t t = 0; t < times; ++t) {
                           const R* src = gv + (r * times + t) * c;
                           R* dst = dv + r * c;
                           for (std::int64_t j = 0; j < c; ++j) dst[j] += src[j];
                         }
                     });
                     g.accum(xid, std::move(dx));
                   });
  }

  Tensor<R> reshape(const Tensor<R>& x, Shape shape) {
    Tensor<R> xt = attach(x);
    Tensor<R> y = xt.detached().reshaped(shape).clone();
    std::int64_t xid = xt.node();
    return make_op(OpKind::reshape, y, {xid}, [xid](Graph& g, const Tensor<R>& gy) {
      if (!g.wants_grad(xid)) return;
      g.accum(xid, gy.reshaped(g.value_of(xid).shape()));
    });
  }

  Tensor<R> sum_all(const Tensor<R>& x) {
    Tensor<R> xt = attach(x);
    double acc = 0;
    for (R v : xt.values()) acc += static_cast<double>(v);
    Tensor<R> y = Tensor<R>::scalar(static_cast<R>(acc));
    std::int64_t xid = xt.node();
    return make_op(OpKind::sum_all, y, {xid}, [xid](Graph& g, const Tensor<R>& gy) {
      if (!g.wants_grad(xid)) return;
      const Tensor<R>& xv = g.value_of(xid);
      g.accum(xid, Tensor<R>::full(xv.shape(), gy.item()));
    });
  }

  Tensor<R> scale(const Tensor<R>& x, R alpha) {
    Tensor<R> xt = attach(x);
    Tensor<R> y = Tensor<R>::zeros(xt.shape());
    auto xv = xt.values();
    auto yv = y.values();
    for (std::int64_t i = 0; i < xt.numel(); ++i) yv[i] = alpha * xv[i];
    std::int64_t xid = xt.node();
    return make_op(OpKind::scale, y, {xid}, [xid, alpha](Graph& g, const Tensor<R>& gy) {
      if (!g.wants_grad(xid)) return;
      Tensor<R> dx = Tensor<R>::zeros(gy.shape());
      auto gv = gy.values();
      auto dv = dx.values();
      for (std::int64_t i = 0; i < gy.numel(); ++i) dv[i] = alpha * gv[i];
      g.accum(xid, dx.reshaped(g.value_of(xid).shape()));
    });
  }

  // Sum of the smooth-L1 penalty over all elements.
  //   paper: 0.5|x|      if |x| < delta, else |x| - delta/2
  //   huber: x^2/(2 delta) if |x| < delta, else |x| - delta/2
  Tensor<R> smooth_l1_sum(const Tensor<R>& x, R delta = R(0.01),
                          SmoothL1Variant variant = SmoothL1Variant::paper) {
    Tensor<R> xt = attach(x);
    double acc = 0;
    for (R vr : xt.values()) {
      double v = std::abs(static_cast<double>(vr));
      double d = static_cast<double>(delta);
      if (v < d)
        acc += variant == SmoothL1Variant::paper ? 0.5 * v : v * v / (2.0 * d);
      else
        acc += v - d / 2.0;
    }
    Tensor<R> y = Tensor<R>::scalar(static_cast<R>(acc));
    std::int64_t xid = xt.node();
    return make_op(OpKind::smooth_l1_sum, y, {xid},
                   [xid, delta, variant](Graph& g, const Tensor<R>& gy) {
                     if (!g.wants_grad(xid)) return;
                     const Tensor<R>& xv = g.value_of(xid);
                     Tensor<R> dx = Tensor<R>::zeros(xv.shape());
                     const R go = gy.item();
                     auto in = xv.values();
                     auto dv = dx.values();
                     for (std::int64_t i = 0; i < xv.numel(); ++i) {
                       R v = in[i];
                       R s = v > R(0) ? R(1) : (v < R(0) ? R(-1) : R(0));
                       R d;
                       if (std::abs(v) < delta)
                         d = variant == SmoothL1Variant::paper ? R(0.5) * s : v / delta;
                       else
                         d = s;
                       dv[i] = go * d;
                     }
                     g.accum(xid, std::move(dx));
                   });
  }

  // Fused linear + batch norm + relu + max over the S axis, blocked over
  // regions so the [*, S, Cout] pre-pool activation is never materialized.
  // x: [..., S, Cin] -> out: [..., Cout]. Train mode runs a separate
  // statistics pass (the GEMM is recomputed instead of stored).
  Tensor<R> sa_tail(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& b,
                    const Tensor<R>& gamma, const Tensor<R>& beta, RunningStats<R>* stats,
                    Mode mode, R momentum = R(0.1), R eps = R(1e-5));

  // ---- backward -----------------------------------------------------------

  void backward(const Tensor<R>& loss) {
    if (ran_backward_) throw GraphError("backward already ran on this graph");
    if (!loss.attached() || !valid_handle(loss)) throw GraphError("loss not attached to graph");
    if (loss.numel() != 1) {
      throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    }
    ran_backward_ = true;
    grads_.assign(nodes_.size(), Tensor<R>{});
    grads_owned_.assign(nodes_.size(), false);
    accum(loss.node(), Tensor<R>::full(loss.shape(), R(1)));
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      Tensor<R>& g = grads_[static_cast<std::size_t>(i)];
      if (n.needs_grad && g.defined() && n.backward) n.backward(*this, g);
      if (n.op == OpKind::leaf) {
        if (g.defined()) leaf_grads_.emplace(i, std::move(g));
      } else {
        n.value.release();  // all consumers and this node's backward are done
      }
      grads_[static_cast<std::size_t>(i)] = Tensor<R>{};
    }
  }

  bool has_grad(const Tensor<R>& t) const {
    auto it = by_buffer_.find(t.buffer_id());
    return it != by_buffer_.end() && leaf_grads_.count(it->second) > 0;
  }

  const Tensor<R>& grad(const Tensor<R>& t) const {
    auto it = by_buffer_.find(t.buffer_id());
    if (it == by_buffer_.end()) throw GraphError("grad(): tensor is not a leaf of this graph");
    auto git = leaf_grads_.find(it->second);
    if (git == leaf_grads_.end()) {
      throw GraphError("grad(): no gradient recorded (did backward run, and is it reachable?)");
    }
    return git->second;
  }

  std::size_t node_count() const { return nodes_.size(); }
  bool backward_done() const { return ran_backward_; }

  // ---- internals used by op closures --------------------------------------

  const Tensor<R>& value_of(std::int64_t id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  bool wants_grad(std::int64_t id) const {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad;
  }

  void accum(std::int64_t id, Tensor<R> g) {
    if (id < 0) return;
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    Tensor<R>& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot.defined()) {
      slot = std::move(g);
      return;
    }
    if (!grads_owned_[static_cast<std::size_t>(id)]) {
      slot = slot.clone();
      grads_owned_[static_cast<std::size_t>(id)] = true;
    }
    auto dst = slot.values();
    auto src = g.values();
    for (std::int64_t i = 0; i < slot.numel(); ++i) dst[i] += src[i];
  }

 private:
  struct Node {
    OpKind op;
    Tensor<R> value;
    std::function<void(Graph&, const Tensor<R>&)> backward;
    bool needs_grad = false;
  };

  bool valid_handle(const Tensor<R>& t) const {
    return t.node() >= 0 && t.node() < static_cast<std::int64_t>(nodes_.size()) &&
           nodes_[static_cast<std::size_t>(t.node())].value.buffer_id() == t.buffer_id();
  }

  Tensor<R> attach(const Tensor<R>& t) {
    if (!t.defined()) throw GraphError("op input tensor is undefined");
    if (t.attached() && valid_handle(t)) return t;
    return leaf(t, /*requires_grad=*/false);
  }

  std::int64_t new_node(OpKind op, Tensor<R> value, bool needs_grad) {
    nodes_.push_back(Node{op, std::move(value), nullptr, needs_grad});
    return static_cast<std::int64_t>(nodes_.size()) - 1;
  }

  Tensor<R> make_op(OpKind op, Tensor<R>& value, const std::vector<std::int64_t>& inputs,
                    std::function<void(Graph&, const Tensor<R>&)> bwd) {
    bool needs = false;
    for (auto id : inputs)
      if (id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad) needs = true;
    std::int64_t id = new_node(op, value, needs);
    nodes_[static_cast<std::size_t>(id)].backward = std::move(bwd);
    return value.with_node(id);
  }

  Tensor<R> elementwise(const Tensor<R>& a, const Tensor<R>& b, OpKind kind) {
    Tensor<R> at = attach(a), bt = attach(b);
    if (at.shape() != bt.shape()) {
      throw DimensionError(std::string(op_name(kind)) + ": shape mismatch " +
                           shape_str(at.shape()) + " vs " + shape_str(bt.shape()));
    }
    const bool is_sub = kind == OpKind::sub;
    Tensor<R> y = Tensor<R>::zeros(at.shape());
    auto av = at.values();
    auto bv = bt.values();
    auto yv = y.values();
    parallel_chunks(y.numel(), [&](std::int64_t i0, std::int64_t i1, int) {
      for (std::int64_t i = i0; i < i1; ++i) yv[i] = is_sub ? av[i] - bv[i] : av[i] + bv[i];
    });
    std::int64_t aid = at.node(), bid = bt.node();
    return make_op(kind, y, {aid, bid}, [aid, bid, is_sub](Graph& g, const Tensor<R>& gy) {
      if (g.wants_grad(aid)) g.accum(aid, gy);
      if (g.wants_grad(bid)) {
        if (!is_sub) {
          g.accum(bid, gy);
        } else {
          Tensor<R> dn = Tensor<R>::zeros(gy.shape());
          auto gv = gy.values();
          auto dv = dn.values();
          for (std::int64_t i = 0; i < gy.numel(); ++i) dv[i] = -gv[i];
          g.accum(bid, std::move(dn));
        }
      }
    });
  }

  Tensor<R> norm_impl(const Tensor<R>& x, const Tensor<R>& gamma, const Tensor<R>& beta,
                      RunningStats<R>* stats, Mode mode, R momentum, R eps, bool fused_relu);

  std::vector<Node> nodes_;
  std::vector<Tensor<R>> grads_;
  std::vector<bool> grads_owned_;
  std::unordered_map<const void*, std::int64_t> by_buffer_;
  std::unordered_map<std::int64_t, Tensor<R>> leaf_grads_;
  bool ran_backward_ = false;
};

}  // namespace handfold

#include "handfold/detail/norm_ops.hpp"
