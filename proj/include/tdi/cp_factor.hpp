// SPDX-License-Identifier: MIT
// CP tensor factor model: CC-ISO loading estimation, signals and factors,
// eigenvalue-ratio rank selection, residuals.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tdi/error.hpp"
#include "tdi/linalg.hpp"
#include "tdi/tensor.hpp"

namespace tdi {

enum class InitMethod { unfolded_pca, user_supplied };

struct CcIsoConfig {
  int max_iterations = 100;
  double tolerance = 1e-5;
  InitMethod init = InitMethod::unfolded_pca;
  /// Starting loadings for InitMethod::user_supplied, one d_k x r matrix per mode.
  std::vector<MatrixXd> initial_loadings;
  /// Make the largest-magnitude entry of every loading column positive.
  bool normalize_signs = true;
  /// Reserved for randomized initializers; the built-in ones are deterministic.
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iterations < 1) throw InvalidArgument("CC-ISO: max_iterations must be >= 1");
    if (!(tolerance > 0.0)) throw InvalidArgument("CC-ISO: tolerance must be positive");
  }
};

/// Estimated CP factor model. Components are ordered by decreasing signal.
struct CpFit {
  Dims dims;
  std::vector<MatrixXd> loadings;  // K matrices d_k x r, unit-norm columns
  VectorXd signals;                // r, positive, non-increasing
  MatrixXd factors;                // T x r
  Index rank = 0;
  int iterations_used = 0;
  bool converged = false;
  double final_gap = 0.0;
  std::vector<double> gap_history;

  Index length() const { return factors.rows(); }
};

namespace detail {

inline void check_rank(const TensorSeries& s, Index r) {
  const Index dmin = *std::min_element(s.dims().begin(), s.dims().end());
  if (r < 1) throw InvalidArgument("rank must be >= 1");
  if (r > dmin)
    throw InvalidArgument("rank " + std::to_string(r) + " exceeds the smallest mode size " + std::to_string(dmin));
  if (s.length() < 2) throw InvalidArgument("need at least 2 slices, got " + std::to_string(s.length()));
  if (s.matrix().cwiseAbs().maxCoeff() == 0.0) throw DataError("series is identically zero");
  if (!s.matrix().allFinite()) throw DataError("series contains non-finite values");
}

/// A (A'A)^{-1}.
inline MatrixXd loading_dual(const MatrixXd& a, Index mode, int iteration) {
  MatrixXd g = a.transpose() * a;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  if (es.eigenvalues().minCoeff() <= 1e-10 * es.eigenvalues().maxCoeff())
    throw NumericalError("CC-ISO: loading Gram matrix of mode " + std::to_string(mode) +
                         " is singular (collinear loadings) at iteration " + std::to_string(iteration));
  return a * g.ldlt().solve(MatrixXd::Identity(g.rows(), g.cols()));
}

inline VectorXd top_eigenvector(const MatrixXd& c, const VectorXd& start) {
  const Index n = c.rows();
  if (n > 64 && start.norm() > 0.0) {
    VectorXd v = start.normalized();
    for (int it = 0; it < 5000; ++it) {
      VectorXd w = c * v;
      const double len = w.norm();
      if (!(len > 0.0)) break;
      w /= len;
      const double diff = (w - v).norm();
      v = std::move(w);
      if (diff <= 1e-10) return v;
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(c);
  if (es.info() != Eigen::Success) throw NumericalError("CC-ISO: eigensolver failed");
  return es.eigenvectors().col(n - 1);
}

}  // namespace detail

/// Starting loadings: top-r eigenvectors of each mode's pooled unfolding
/// covariance, or the caller's matrices with columns normalized.
inline std::vector<MatrixXd> initialize_loadings(const TensorSeries& s, Index r, const CcIsoConfig& cfg = {}) {
  cfg.validate();
  detail::check_rank(s, r);
  std::vector<MatrixXd> out;
  if (cfg.init == InitMethod::user_supplied) {
    if (cfg.initial_loadings.size() != s.dims().size())
      throw DimensionError("initial loadings: expected " + std::to_string(s.dims().size()) + " matrices");
    for (std::size_t k = 0; k < s.dims().size(); ++k) {
      const MatrixXd& a = cfg.initial_loadings[k];
      if (a.rows() != s.dims()[k] || a.cols() != r)
        throw DimensionError("initial loadings of mode " + std::to_string(k) + " must be " +
                             std::to_string(s.dims()[k]) + "x" + std::to_string(r));
      MatrixXd n = a;
      for (Index j = 0; j < r; ++j) {
        const double len = n.col(j).norm();
        if (!(len > 0.0)) throw InvalidArgument("initial loading column " + std::to_string(j) + " of mode " +
                                                std::to_string(k) + " is zero");
        n.col(j) /= len;
      }
      out.push_back(std::move(n));
    }
    return out;
  }
  for (Index k = 0; k < s.order(); ++k) {
    MatrixXd g = mode_gram(s, k) / static_cast<double>(s.length());
    out.push_back(top_eigenpairs(g, r).vectors);
  }
  return out;
}

/// CC-ISO. Each iteration sweeps the modes in order; within a mode every
/// component is refreshed against the current duals of the other modes, then
/// that mode's dual is rebuilt.
inline CpFit cc_iso(const TensorSeries& s, Index r, const CcIsoConfig& cfg = {}) {
  std::vector<MatrixXd> a = initialize_loadings(s, r, cfg);
  const Index K = s.order();
  const auto KK = static_cast<std::size_t>(K);
  const double T = static_cast<double>(s.length());

  std::vector<MatrixXd> b(KK);
  for (Index k = 0; k < K; ++k) b[static_cast<std::size_t>(k)] = detail::loading_dual(a[static_cast<std::size_t>(k)], k, 0);

  CpFit fit;
  fit.dims = s.dims();
  fit.rank = r;
  std::vector<MatrixXd> best_a = a, best_b = b;
  double best_gap = std::numeric_limits<double>::infinity();

  std::vector<VectorXd> vecs(KK);
  for (int m = 1; m <= cfg.max_iterations; ++m) {
    const std::vector<MatrixXd> prev = a;
    for (Index k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      for (Index i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < KK; ++j)
          if (j != kk) vecs[j] = b[j].col(i);
        MatrixXd z = contract_except(s, vecs, k);
        MatrixXd c(z.rows(), z.rows());
        c.setZero();
        c.selfadjointView<Eigen::Lower>().rankUpdate(z, 1.0 / T);
        c = c.selfadjointView<Eigen::Lower>();
        VectorXd v = detail::top_eigenvector(c, prev[kk].col(i));
        if (v.dot(prev[kk].col(i)) < 0.0) v = -v;
        a[kk].col(i) = v;
      }
      b[kk] = detail::loading_dual(a[kk], k, m);
    }
    double gap = 0.0;
    for (std::size_t k = 0; k < KK; ++k)
      for (Index i = 0; i < r; ++i) gap = std::max(gap, sin_angle(a[k].col(i), prev[k].col(i)));
    fit.gap_history.push_back(gap);
    fit.iterations_used = m;
    if (gap < best_gap) {
      best_gap = gap;
      best_a = a;
      best_b = b;
    }
    if (gap <= cfg.tolerance) {
      fit.converged = true;
      break;
    }
  }
  a = std::move(best_a);
  b = std::move(best_b);
  fit.final_gap = best_gap;

  if (cfg.normalize_signs) {
    for (std::size_t k = 0; k < KK; ++k) {
      VectorXd signs = normalize_column_signs(a[k]);
      b[k] = b[k] * signs.asDiagonal();
    }
  }

  VectorXd sig(r);
  MatrixXd f(s.length(), r);
  for (Index i = 0; i < r; ++i) {
    for (std::size_t k = 0; k < KK; ++k) vecs[k] = b[k].col(i);
    VectorXd g = contract_all(s, vecs);
    sig(i) = std::sqrt(g.squaredNorm() / T);
    if (!(sig(i) > 0.0)) throw NumericalError("CC-ISO: estimated signal of component " + std::to_string(i) + " is zero");
    f.col(i) = g / sig(i);
  }

  std::vector<Index> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return sig(x) > sig(y); });
  fit.signals.resize(r);
  fit.factors.resize(s.length(), r);
  fit.loadings.assign(KK, MatrixXd());
  for (std::size_t k = 0; k < KK; ++k) fit.loadings[k].resize(a[k].rows(), r);
  for (Index j = 0; j < r; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    fit.signals(j) = sig(src);
    fit.factors.col(j) = f.col(src);
    for (std::size_t k = 0; k < KK; ++k) fit.loadings[k].col(j) = a[k].col(src);
  }
  return fit;
}

/// Duals B_k = A_k (A_k'A_k)^{-1} of every mode.
inline std::vector<MatrixXd> loading_duals(const CpFit& fit) {
  std::vector<MatrixXd> b;
  for (std::size_t k = 0; k < fit.loadings.size(); ++k)
    b.push_back(detail::loading_dual(fit.loadings[k], static_cast<Index>(k), fit.iterations_used));
  return b;
}

/// d x r matrix whose column i is b_iK (x) ... (x) b_i1.
inline MatrixXd b_matrix(const CpFit& fit) { return khatri_rao_chain(loading_duals(fit)); }

/// Eigenvalues lambda_1 >= ... >= lambda_{r_max+1} of (1/(dT)) sum_t vec(X_t) vec(X_t)'.
inline VectorXd pooled_eigenvalues(const TensorSeries& s, Index count) {
  const MatrixXd& x = s.matrix();
  const double scale = 1.0 / (static_cast<double>(x.rows()) * static_cast<double>(x.cols()));
  const Index n = std::min(x.rows(), x.cols());
  MatrixXd g;
  if (x.cols() < x.rows()) {
    g = MatrixXd::Zero(n, n);
    g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), scale);
  } else {
    g = MatrixXd::Zero(n, n);
    g.selfadjointView<Eigen::Lower>().rankUpdate(x, scale);
  }
  VectorXd vals = VectorXd::Zero(count);
  const Index avail = std::min(count, n);
  vals.head(avail) = top_eigenpairs(g, avail).values.cwiseMax(0.0);
  return vals;
}

/// Eigenvalue-ratio rank: argmax_{1<=i<=r_max} lambda_i / lambda_{i+1}, first index on ties.
/// A zero denominator with a positive numerator counts as an infinite ratio;
/// 0/0 counts as 1.
inline Index select_rank(const TensorSeries& s, Index r_max) {
  const Index dmin = *std::min_element(s.dims().begin(), s.dims().end());
  if (r_max < 1 || r_max >= dmin)
    throw InvalidArgument("select_rank: r_max must satisfy 1 <= r_max < " + std::to_string(dmin));
  if (s.matrix().cwiseAbs().maxCoeff() == 0.0) throw DataError("series is identically zero");
  VectorXd ev = pooled_eigenvalues(s, r_max + 1);
  Index best = 1;
  double best_ratio = -1.0;
  for (Index i = 0; i < r_max; ++i) {
    double ratio;
    if (ev(i + 1) > 0.0) ratio = ev(i) / ev(i + 1);
    else ratio = ev(i) > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = i + 1;
    }
  }
  return best;
}

inline void check_fit_dims(const TensorSeries& s, const CpFit& fit) {
  if (fit.dims != s.dims())
    throw DimensionError("fit dims " + dims_string(fit.dims) + " do not match series dims " + dims_string(s.dims()));
  if (fit.rank > 0 && fit.factors.rows() != s.length())
    throw DimensionError("fit has " + std::to_string(fit.factors.rows()) + " factor rows, series has " +
                         std::to_string(s.length()) + " slices");
}

/// T x d matrix of vec(X_t - sum_i s_i f_it a_i1 o ... o a_iK), one row per slice.
inline MatrixXd residual_matrix(const TensorSeries& s, const CpFit& fit) {
  check_fit_dims(s, fit);
  MatrixXd e = s.matrix().transpose();
  if (fit.rank == 0) return e;
  MatrixXd chain = khatri_rao_chain(fit.loadings);
  e.noalias() -= fit.factors * fit.signals.asDiagonal() * chain.transpose();
  return e;
}

inline TensorSeries residual_tensors(const TensorSeries& s, const CpFit& fit) {
  return TensorSeries(s.dims(), residual_matrix(s, fit).transpose(), s.timestamps());
}

}  // namespace tdi
