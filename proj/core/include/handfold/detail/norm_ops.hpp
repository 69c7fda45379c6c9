#pragma once

// Implementations of batch_norm / bn_relu and the fused sa_tail op.
// Channel statistics are accumulated in double and per-thread partials are
// combined in thread order, so results are reproducible for a fixed build
// and thread count.

#include <cmath>
#include <cstring>

#ifdef HANDFOLD_HAS_OPENMP
#include <omp.h>
#endif

namespace handfold {

namespace detail {

// Per-channel sum and sum of squares over rows, chunked and combined in order.
template <typename R>
void channel_moments(const R* x, std::int64_t rows, std::int64_t c, std::vector<double>& sum,
                     std::vector<double>& sumsq) {
  int nt = num_threads();
  sum.assign(static_cast<std::size_t>(c), 0.0);
  sumsq.assign(static_cast<std::size_t>(c), 0.0);
  std::vector<std::vector<double>> part(static_cast<std::size_t>(nt)),
      partsq(static_cast<std::size_t>(nt));
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp parallel for schedule(static) num_threads(nt)
#endif
  for (int t = 0; t < nt; ++t) {
    auto& p = part[static_cast<std::size_t>(t)];
    auto& q = partsq[static_cast<std::size_t>(t)];
    p.assign(static_cast<std::size_t>(c), 0.0);
    q.assign(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t r = chunk_begin(rows, t, nt); r < chunk_end(rows, t, nt); ++r) {
      const R* row = x + r * c;
      for (std::int64_t j = 0; j < c; ++j) {
        double v = static_cast<double>(row[j]);
        p[static_cast<std::size_t>(j)] += v;
        q[static_cast<std::size_t>(j)] += v * v;
      }
    }
  }
  for (int t = 0; t < nt; ++t)
    for (std::int64_t j = 0; j < c; ++j) {
      sum[static_cast<std::size_t>(j)] += part[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
      sumsq[static_cast<std::size_t>(j)] += partsq[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
    }
}

}  // namespace detail

template <typename R>
Tensor<R> Graph<R>::norm_impl(const Tensor<R>& x, const Tensor<R>& gamma, const Tensor<R>& beta,
                              RunningStats<R>* stats, Mode mode, R momentum, R eps,
                              bool fused_relu) {
  Tensor<R> xt = attach(x), gt = attach(gamma), bt = attach(beta);
  const std::int64_t c = xt.channels(), rows = xt.rows();
  if (gt.numel() != c || bt.numel() != c) {
    throw DimensionError("batch_norm: gamma/beta " + shape_str(gt.shape()) + "/" +
                         shape_str(bt.shape()) + " do not match channels of " +
                         shape_str(xt.shape()));
  }
  if (mode == Mode::eval && (stats == nullptr || !stats->defined())) {
    throw GraphError("batch_norm: eval mode requires running statistics");
  }

  // mean / invstd used for normalization (batch stats in train mode).
  std::vector<R> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  if (mode == Mode::train) {
    std::vector<double> sum, sumsq;
    detail::channel_moments(xt.data(), rows, c, sum, sumsq);
    for (std::int64_t j = 0; j < c; ++j) {
      double m = sum[static_cast<std::size_t>(j)] / static_cast<double>(rows);
      double v = sumsq[static_cast<std::size_t>(j)] / static_cast<double>(rows) - m * m;
      if (v < 0) v = 0;  // guard fp cancellation (and the batch-of-one case)
      mean[static_cast<std::size_t>(j)] = static_cast<R>(m);
      invstd[static_cast<std::size_t>(j)] =
          static_cast<R>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      if (stats) {
        stats->mean[j] = (R(1) - momentum) * stats->mean[j] + momentum * static_cast<R>(m);
        stats->var[j] = (R(1) - momentum) * stats->var[j] + momentum * static_cast<R>(v);
      }
    }
  } else {
    for (std::int64_t j = 0; j < c; ++j) {
      mean[static_cast<std::size_t>(j)] = stats->mean[j];
      invstd[static_cast<std::size_t>(j)] =
          static_cast<R>(1.0 / std::sqrt(static_cast<double>(stats->var[j]) +
                                         static_cast<double>(eps)));
    }
  }

  Tensor<R> y = Tensor<R>::zeros(xt.shape());
  {
    const R* xd = xt.data();
    const R* gd = gt.data();
    const R* bd = bt.data();
    R* yd = y.data();
    parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
      for (std::int64_t r = r0; r < r1; ++r) {
        const R* xr = xd + r * c;
        R* yr = yd + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
          R v = gd[j] * (xr[j] - mean[static_cast<std::size_t>(j)]) *
                    invstd[static_cast<std::size_t>(j)] +
                bd[j];
          yr[j] = fused_relu ? (v > R(0) ? v : R(0)) : v;
        }
      }
    });
  }

  auto mean_sh = std::make_shared<std::vector<R>>(std::move(mean));
  auto istd_sh = std::make_shared<std::vector<R>>(std::move(invstd));
  std::int64_t xid = xt.node(), gid = gt.node(), bid = bt.node();
  const bool train = mode == Mode::train;
  OpKind kind = fused_relu ? OpKind::bn_relu : OpKind::batch_norm;
  return make_op(kind, y, {xid, gid, bid},
                 [xid, gid, bid, mean_sh, istd_sh, rows, c, train,
                  fused_relu](Graph& g, const Tensor<R>& gy) {
    const Tensor<R>& xv = g.value_of(xid);
    const Tensor<R>& gv = g.value_of(gid);
    const R* xd = xv.data();
    const R* gmd = gv.data();
    const R* gyd = gy.data();
    const R* mu = mean_sh->data();
    const R* is = istd_sh->data();

    // For bn_relu the effective gradient is masked by the output sign.
    // The pre-relu value v = gamma*(x-mu)*invstd + beta is recomputed on the
    // fly (same expression as the forward pass) instead of materializing it.
    const R* bd = g.value_of(bid).data();

    auto dy_at = [&](std::int64_t r, std::int64_t j) -> R {
      R dy = gyd[r * c + j];
      if (!fused_relu) return dy;
      R v = gmd[j] * (xd[r * c + j] - mu[j]) * is[j] + bd[j];
      return v > R(0) ? dy : R(0);
    };

    // Pass 1: per-channel sums of dy and dy*xhat.
    int nt = num_threads();
    std::vector<std::vector<double>> p_db(static_cast<std::size_t>(nt)),
        p_dg(static_cast<std::size_t>(nt));
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp parallel for schedule(static) num_threads(nt)
#endif
    for (int t = 0; t < nt; ++t) {
      auto& db = p_db[static_cast<std::size_t>(t)];
      auto& dg = p_dg[static_cast<std::size_t>(t)];
      db.assign(static_cast<std::size_t>(c), 0.0);
      dg.assign(static_cast<std::size_t>(c), 0.0);
      for (std::int64_t r = chunk_begin(rows, t, nt); r < chunk_end(rows, t, nt); ++r)
        for (std::int64_t j = 0; j < c; ++j) {
          double dy = static_cast<double>(dy_at(r, j));
          double xh = static_cast<double>((xd[r * c + j] - mu[j]) * is[j]);
          db[static_cast<std::size_t>(j)] += dy;
          dg[static_cast<std::size_t>(j)] += dy * xh;
        }
    }
    std::vector<double> dbeta(static_cast<std::size_t>(c), 0.0),
        dgamma(static_cast<std::size_t>(c), 0.0);
    for (int t = 0; t < nt; ++t)
      for (std::int64_t j = 0; j < c; ++j) {
        dbeta[static_cast<std::size_t>(j)] += p_db[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
        dgamma[static_cast<std::size_t>(j)] += p_dg[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
      }

    if (g.wants_grad(gid) || g.wants_grad(bid)) {
      Tensor<R> dgt = Tensor<R>::zeros({c}), dbt = Tensor<R>::zeros({c});
      for (std::int64_t j = 0; j < c; ++j) {
        dgt[j] = static_cast<R>(dgamma[static_cast<std::size_t>(j)]);
        dbt[j] = static_cast<R>(dbeta[static_cast<std::size_t>(j)]);
      }
      g.accum(gid, std::move(dgt));
      g.accum(bid, std::move(dbt));
    }

    if (g.wants_grad(xid)) {
      Tensor<R> dx = Tensor<R>::zeros(xv.shape());
      R* dxd = dx.data();
      const double inv_n = 1.0 / static_cast<double>(rows);
      parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
        for (std::int64_t r = r0; r < r1; ++r)
          for (std::int64_t j = 0; j < c; ++j) {
            double dy = static_cast<double>(dy_at(r, j));
            double coef = static_cast<double>(gmd[j]) * static_cast<double>(is[j]);
            if (train) {
              double xh = static_cast<double>((xd[r * c + j] - mu[j]) * is[j]);
              dy -= dbeta[static_cast<std::size_t>(j)] * inv_n +
                    xh * dgamma[static_cast<std::size_t>(j)] * inv_n;
            }
            dxd[r * c + j] = static_cast<R>(coef * dy);
          }
      });
      g.accum(xid, std::move(dx));
    }
  });
}

template <typename R>
Tensor<R> Graph<R>::sa_tail(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& b,
                            const Tensor<R>& gamma, const Tensor<R>& beta,
                            RunningStats<R>* stats, Mode mode, R momentum, R eps) {
  Tensor<R> xt = attach(x), wt = attach(w), bt = attach(b), gt = attach(gamma),
            bet = attach(beta);
  if (xt.rank() < 2) throw DimensionError("sa_tail: input must be at least rank 2");
  if (wt.rank() != 2) throw DimensionError("sa_tail: weight must be rank 2");
  const std::int64_t cin = wt.extent(0), cout = wt.extent(1);
  const std::int64_t s_extent = xt.extent(xt.rank() - 2);
  if (xt.channels() != cin) {
    throw DimensionError("sa_tail: input " + shape_str(xt.shape()) + " incompatible with weight " +
                         shape_str(wt.shape()));
  }
  if (gt.numel() != cout || bet.numel() != cout || bt.numel() != cout) {
    throw DimensionError("sa_tail: bias/gamma/beta must have " + std::to_string(cout) +
                         " channels");
  }
  if (mode == Mode::eval && (stats == nullptr || !stats->defined())) {
    throw GraphError("sa_tail: eval mode requires running statistics");
  }
  const std::int64_t regions = xt.numel() / (s_extent * cin);
  const std::int64_t n_rows = regions * s_extent;

  // Regions per GEMM block: keep the recomputed activation block near 1 MiB.
  const std::int64_t block =
      std::clamp<std::int64_t>((1 << 20) / std::max<std::int64_t>(1, s_extent * cout *
                                                                        static_cast<std::int64_t>(sizeof(R))),
                               1, 512);

  std::vector<R> mean(static_cast<std::size_t>(cout)), invstd(static_cast<std::size_t>(cout));
  const int nt = num_threads();
  const std::int64_t n_blocks = (regions + block - 1) / block;

  auto gemm_block = [&](std::int64_t blk, std::vector<R>& z) {
    std::int64_t r0 = blk * block, r1 = std::min(regions, r0 + block);
    std::int64_t rows = (r1 - r0) * s_extent;
    z.resize(static_cast<std::size_t>(rows * cout));
    detail::ConstMatMap<R> X(xt.data() + r0 * s_extent * cin, rows, cin);
    detail::ConstMatMap<R> W(wt.data(), cin, cout);
    detail::MatMap<R> Z(z.data(), rows, cout);
    Z.noalias() = X * W;
    Z.rowwise() += detail::ConstVecMap<R>(bt.data(), cout).transpose();
    return std::pair<std::int64_t, std::int64_t>{r0, r1};
  };

  if (mode == Mode::train) {
    std::vector<std::vector<double>> p_sum(static_cast<std::size_t>(nt)),
        p_sq(static_cast<std::size_t>(nt));
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp parallel num_threads(nt)
#endif
    {
#ifdef HANDFOLD_HAS_OPENMP
      int t = omp_get_thread_num();
#else
      int t = 0;
#endif
      auto& sum = p_sum[static_cast<std::size_t>(t)];
      auto& sq = p_sq[static_cast<std::size_t>(t)];
      sum.assign(static_cast<std::size_t>(cout), 0.0);
      sq.assign(static_cast<std::size_t>(cout), 0.0);
      std::vector<R> z;
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp for schedule(static)
#endif
      for (std::int64_t blk = 0; blk < n_blocks; ++blk) {
        auto [r0, r1] = gemm_block(blk, z);
        const std::int64_t rows = (r1 - r0) * s_extent;
        for (std::int64_t r = 0; r < rows; ++r) {
          const R* zr = z.data() + r * cout;
          for (std::int64_t j = 0; j < cout; ++j) {
            double v = static_cast<double>(zr[j]);
            sum[static_cast<std::size_t>(j)] += v;
            sq[static_cast<std::size_t>(j)] += v * v;
          }
        }
      }
    }
    for (std::int64_t j = 0; j < cout; ++j) {
      double s = 0, q = 0;
      for (int t = 0; t < nt; ++t) {
        s += p_sum[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
        q += p_sq[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
      }
      double m = s / static_cast<double>(n_rows);
      double v = q / static_cast<double>(n_rows) - m * m;
      if (v < 0) v = 0;
      mean[static_cast<std::size_t>(j)] = static_cast<R>(m);
      invstd[static_cast<std::size_t>(j)] =
          static_cast<R>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      if (stats) {
        stats->mean[j] = (R(1) - momentum) * stats->mean[j] + momentum * static_cast<R>(m);
        stats->var[j] = (R(1) - momentum) * stats->var[j] + momentum * static_cast<R>(v);
      }
    }
  } else {
    for (std::int64_t j = 0; j < cout; ++j) {
      mean[static_cast<std::size_t>(j)] = stats->mean[j];
      invstd[static_cast<std::size_t>(j)] =
          static_cast<R>(1.0 / std::sqrt(static_cast<double>(stats->var[j]) +
                                         static_cast<double>(eps)));
    }
  }

  Shape out_shape(xt.shape().begin(), xt.shape().end() - 2);
  out_shape.push_back(cout);
  Tensor<R> y = Tensor<R>::zeros(out_shape);
  auto amax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(regions * cout), 0);
  auto xhat_amax = std::make_shared<std::vector<R>>(static_cast<std::size_t>(regions * cout));

  {
    R* yd = y.data();
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp parallel num_threads(nt)
#endif
    {
      std::vector<R> z;
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp for schedule(static)
#endif
      for (std::int64_t blk = 0; blk < n_blocks; ++blk) {
        auto [r0, r1] = gemm_block(blk, z);
        for (std::int64_t reg = r0; reg < r1; ++reg) {
          const R* zreg = z.data() + (reg - r0) * s_extent * cout;
          R* yrow = yd + reg * cout;
          for (std::int64_t j = 0; j < cout; ++j) {
            R best = R(0);
            std::int32_t bs = 0;
            R best_xh = (zreg[j] - mean[static_cast<std::size_t>(j)]) *
                        invstd[static_cast<std::size_t>(j)];
            {
              R v0 = gt.data()[j] * best_xh + bet.data()[j];
              best = v0 > R(0) ? v0 : R(0);
            }
            for (std::int64_t s = 1; s < s_extent; ++s) {
              R xh = (zreg[s * cout + j] - mean[static_cast<std::size_t>(j)]) *
                     invstd[static_cast<std::size_t>(j)];
              R v = gt.data()[j] * xh + bet.data()[j];
              R rv = v > R(0) ? v : R(0);
              if (rv > best) {
                best = rv;
                bs = static_cast<std::int32_t>(s);
                best_xh = xh;
              }
            }
            yrow[j] = best;
            (*amax)[static_cast<std::size_t>(reg * cout + j)] = bs;
            (*xhat_amax)[static_cast<std::size_t>(reg * cout + j)] = best_xh;
          }
        }
      }
    }
  }

  auto mean_sh = std::make_shared<std::vector<R>>(std::move(mean));
  auto istd_sh = std::make_shared<std::vector<R>>(std::move(invstd));
  std::int64_t xid = xt.node(), wid = wt.node(), bid = bt.node(), gid = gt.node(),
               beid = bet.node();
  const bool train = mode == Mode::train;

  return make_op(
      OpKind::sa_tail, y, {xid, wid, bid, gid, beid},
      [xid, wid, bid, gid, beid, mean_sh, istd_sh, amax, xhat_amax, regions, s_extent, cin,
       cout, block, n_blocks, n_rows, train](Graph& g, const Tensor<R>& gy) {
        const Tensor<R>& xv = g.value_of(xid);
        const Tensor<R>& wv = g.value_of(wid);
        const Tensor<R>& gv = g.value_of(gid);
        const R* gyd = gy.data();
        const R* gmd = gv.data();
        const R* mu = mean_sh->data();
        const R* is = istd_sh->data();

        // dv[reg, j]: gradient after the relu mask at the argmax position.
        // The max output is relu(v_argmax), so out > 0 <=> v_argmax > 0.
        std::vector<R> dv(static_cast<std::size_t>(regions * cout));
        std::vector<double> dbeta(static_cast<std::size_t>(cout), 0.0),
            dgamma(static_cast<std::size_t>(cout), 0.0);
        {
          const R* bd = g.value_of(beid).data();
          for (std::int64_t i = 0; i < regions * cout; ++i) {
            std::int64_t j = i % cout;
            R vmax = gmd[j] * (*xhat_amax)[static_cast<std::size_t>(i)] + bd[j];
            R d = vmax > R(0) ? gyd[i] : R(0);
            dv[static_cast<std::size_t>(i)] = d;
            dbeta[static_cast<std::size_t>(j)] += static_cast<double>(d);
            dgamma[static_cast<std::size_t>(j)] +=
                static_cast<double>(d) * static_cast<double>((*xhat_amax)[static_cast<std::size_t>(i)]);
          }
        }
        if (g.wants_grad(gid) || g.wants_grad(beid)) {
          Tensor<R> dgt = Tensor<R>::zeros({cout}), dbt = Tensor<R>::zeros({cout});
          for (std::int64_t j = 0; j < cout; ++j) {
            dgt[j] = static_cast<R>(dgamma[static_cast<std::size_t>(j)]);
            dbt[j] = static_cast<R>(dbeta[static_cast<std::size_t>(j)]);
          }
          g.accum(gid, std::move(dgt));
          g.accum(beid, std::move(dbt));
        }

        // Batch-stat coupling terms (zero in eval mode).
        std::vector<double> term_a(static_cast<std::size_t>(cout), 0.0),
            term_b(static_cast<std::size_t>(cout), 0.0);
        if (train) {
          for (std::int64_t j = 0; j < cout; ++j) {
            term_a[static_cast<std::size_t>(j)] =
                static_cast<double>(gmd[j]) * dbeta[static_cast<std::size_t>(j)] / n_rows;
            term_b[static_cast<std::size_t>(j)] =
                static_cast<double>(gmd[j]) * dgamma[static_cast<std::size_t>(j)] / n_rows;
          }
        }

        const bool want_dx = g.wants_grad(xid);
        const bool want_dw = g.wants_grad(wid) || g.wants_grad(bid);
        Tensor<R> dx = want_dx ? Tensor<R>::zeros(xv.shape()) : Tensor<R>{};

        int nt = num_threads();
        std::vector<std::vector<R>> p_dw(static_cast<std::size_t>(nt)),
            p_db(static_cast<std::size_t>(nt));
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp parallel num_threads(nt)
#endif
        {
#ifdef HANDFOLD_HAS_OPENMP
          int t = omp_get_thread_num();
#else
          int t = 0;
#endif
          auto& dwp = p_dw[static_cast<std::size_t>(t)];
          auto& dbp = p_db[static_cast<std::size_t>(t)];
          if (want_dw) {
            dwp.assign(static_cast<std::size_t>(cin * cout), R(0));
            dbp.assign(static_cast<std::size_t>(cout), R(0));
          }
          std::vector<R> z, dz;
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp for schedule(static)
#endif
          for (std::int64_t blk = 0; blk < n_blocks; ++blk) {
            std::int64_t r0 = blk * block, r1 = std::min(regions, r0 + block);
            std::int64_t rows = (r1 - r0) * s_extent;
            z.resize(static_cast<std::size_t>(rows * cout));
            dz.resize(static_cast<std::size_t>(rows * cout));
            {
              detail::ConstMatMap<R> X(xv.data() + r0 * s_extent * cin, rows, cin);
              detail::ConstMatMap<R> W(wv.data(), cin, cout);
              detail::MatMap<R> Z(z.data(), rows, cout);
              Z.noalias() = X * W;
              // bias cancels inside the normalization; add it only for xhat
              // consistency with the forward pass.
              Z.rowwise() += detail::ConstVecMap<R>(g.value_of(bid).data(), cout).transpose();
            }
            for (std::int64_t reg = r0; reg < r1; ++reg) {
              const R* zreg = z.data() + (reg - r0) * s_extent * cout;
              R* dzreg = dz.data() + (reg - r0) * s_extent * cout;
              for (std::int64_t s = 0; s < s_extent; ++s)
                for (std::int64_t j = 0; j < cout; ++j) {
                  double acc = 0.0;
                  if (train) {
                    double xh = static_cast<double>((zreg[s * cout + j] - mu[j]) * is[j]);
                    acc = -term_a[static_cast<std::size_t>(j)] -
                          xh * term_b[static_cast<std::size_t>(j)];
                  }
                  if (s == (*amax)[static_cast<std::size_t>(reg * cout + j)]) {
                    acc += static_cast<double>(gmd[j]) *
                           static_cast<double>(dv[static_cast<std::size_t>(reg * cout + j)]);
                  }
                  dzreg[s * cout + j] = static_cast<R>(acc * static_cast<double>(is[j]));
                }
            }
            if (want_dw) {
              detail::ConstMatMap<R> X(xv.data() + r0 * s_extent * cin, rows, cin);
              detail::ConstMatMap<R> dZ(dz.data(), rows, cout);
              detail::MatMap<R>(dwp.data(), cin, cout).noalias() += X.transpose() * dZ;
              detail::VecMap<R>(dbp.data(), cout).noalias() +=
                  dZ.colwise().sum().transpose();
            }
            if (want_dx) {
              detail::ConstMatMap<R> dZ(dz.data(), rows, cout);
              detail::ConstMatMap<R> W(wv.data(), cin, cout);
              detail::MatMap<R> dX(dx.data() + r0 * s_extent * cin, rows, cin);
              dX.noalias() = dZ * W.transpose();
            }
          }
        }
        if (want_dw) {
          Tensor<R> dwt = Tensor<R>::zeros(wv.shape());
          Tensor<R> dbt = Tensor<R>::zeros({cout});
          for (int t = 0; t < nt; ++t) {
            for (std::int64_t i = 0; i < cin * cout; ++i)
              dwt[i] += p_dw[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < cout; ++j)
              dbt[j] += p_db[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
          }
          g.accum(wid, std::move(dwt));
          g.accum(bid, std::move(dbt));
        }
        if (want_dx) g.accum(xid, std::move(dx));
      });
}

}  // namespace handfold
