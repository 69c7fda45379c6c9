#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "handfold/parallel.hpp"

namespace handfold::detail {

template <typename R>
using MatMap = Eigen::Map<Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename R>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename R>
using VecMap = Eigen::Map<Eigen::Matrix<R, Eigen::Dynamic, 1>>;
template <typename R>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<R, Eigen::Dynamic, 1>>;

// Y = X * W (+ bias per row). Rows are split across threads; each output
// element is produced by exactly one Eigen product, so the reduction order
// is fixed for a given build and thread count.
template <typename R>
void gemm_bias(const R* x, std::int64_t rows, std::int64_t cin, const R* w, std::int64_t cout,
               const R* bias, R* y) {
  parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
    if (r1 <= r0) return;
    ConstMatMap<R> X(x + r0 * cin, r1 - r0, cin);
    ConstMatMap<R> W(w, cin, cout);
    MatMap<R> Y(y + r0 * cout, r1 - r0, cout);
    Y.noalias() = X * W;
    if (bias) Y.rowwise() += ConstVecMap<R>(bias, cout).transpose();
  });
}

// dX = dY * W^T.
template <typename R>
void gemm_grad_input(const R* dy, std::int64_t rows, std::int64_t cout, const R* w,
                     std::int64_t cin, R* dx) {
  parallel_chunks(rows, [&](std::int64_t r0, std::int64_t r1, int) {
    if (r1 <= r0) return;
    ConstMatMap<R> dY(dy + r0 * cout, r1 - r0, cout);
    ConstMatMap<R> W(w, cin, cout);
    MatMap<R> dX(dx + r0 * cin, r1 - r0, cin);
    dX.noalias() = dY * W.transpose();
  });
}

// dW += X^T * dY, db += column sums of dY. The row range is split across
// threads into per-thread partials that are then summed in thread order.
template <typename R>
void gemm_grad_weights(const R* x, const R* dy, std::int64_t rows, std::int64_t cin,
                       std::int64_t cout, R* dw, R* db) {
  int nt = num_threads();
  if (rows < 8192 || nt <= 1) {
    ConstMatMap<R> X(x, rows, cin);
    ConstMatMap<R> dY(dy, rows, cout);
    MatMap<R>(dw, cin, cout).noalias() += X.transpose() * dY;
    if (db) VecMap<R>(db, cout).noalias() += dY.colwise().sum().transpose();
    return;
  }
  std::vector<std::vector<R>> dw_part(static_cast<std::size_t>(nt));
  std::vector<std::vector<R>> db_part(static_cast<std::size_t>(nt));
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp parallel for schedule(static) num_threads(nt)
#endif
  for (int t = 0; t < nt; ++t) {
    std::int64_t r0 = chunk_begin(rows, t, nt), r1 = chunk_end(rows, t, nt);
    auto& dwp = dw_part[static_cast<std::size_t>(t)];
    dwp.assign(static_cast<std::size_t>(cin * cout), R(0));
    ConstMatMap<R> X(x + r0 * cin, r1 - r0, cin);
    ConstMatMap<R> dY(dy + r0 * cout, r1 - r0, cout);
    MatMap<R>(dwp.data(), cin, cout).noalias() = X.transpose() * dY;
    if (db) {
      auto& dbp = db_part[static_cast<std::size_t>(t)];
      dbp.assign(static_cast<std::size_t>(cout), R(0));
      VecMap<R>(dbp.data(), cout).noalias() = dY.colwise().sum().transpose();
    }
  }
  for (int t = 0; t < nt; ++t) {
    const auto& dwp = dw_part[static_cast<std::size_t>(t)];
    for (std::int64_t i = 0; i < cin * cout; ++i) dw[i] += dwp[static_cast<std::size_t>(i)];
    if (db) {
      const auto& dbp = db_part[static_cast<std::size_t>(t)];
      for (std::int64_t c = 0; c < cout; ++c) db[c] += dbp[static_cast<std::size_t>(c)];
    }
  }
}

}  // namespace handfold::detail
