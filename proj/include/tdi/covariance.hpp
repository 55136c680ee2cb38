// SPDX-License-Identifier: MIT
// Thresholded error covariance and the factor variance matrices built from it.
// Residual matrices are T x d (one row per time index).
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "tdi/cp_factor.hpp"
#include "tdi/error.hpp"
#include "tdi/linalg.hpp"

namespace tdi {

enum class ThresholdKind { hard, soft, scad };

inline const char* to_string(ThresholdKind k) {
  switch (k) {
    case ThresholdKind::hard: return "hard";
    case ThresholdKind::soft: return "soft";
    case ThresholdKind::scad: return "scad";
  }
  return "?";
}

inline ThresholdKind threshold_kind_from_string(const std::string& s) {
  if (s == "hard") return ThresholdKind::hard;
  if (s == "soft") return ThresholdKind::soft;
  if (s == "scad") return ThresholdKind::scad;
  throw InvalidArgument("unknown threshold rule '" + s + "' (expected hard, soft or scad)");
}

struct ThresholdRule {
  ThresholdKind kind = ThresholdKind::scad;
  double lambda = 0.0;
  double a = 3.7;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("threshold lambda must be finite and >= 0");
    if (kind == ThresholdKind::scad && !(a > 2.0)) throw InvalidArgument("SCAD shape parameter a must exceed 2");
  }
};

inline double apply_threshold(double z, const ThresholdRule& rule) {
  const double az = std::abs(z);
  const double lam = rule.lambda;
  switch (rule.kind) {
    case ThresholdKind::hard:
      return az > lam ? z : 0.0;
    case ThresholdKind::soft:
      return az > lam ? std::copysign(az - lam, z) : 0.0;
    case ThresholdKind::scad:
      if (az <= 2.0 * lam) return az > lam ? std::copysign(az - lam, z) : 0.0;
      if (az <= rule.a * lam) return ((rule.a - 1.0) * z - std::copysign(rule.a * lam, z)) / (rule.a - 2.0);
      return z;
  }
  return z;
}

/// sqrt(log d / T) + 1/s_r: the rate-level default with unit constant and the
/// weakest factor's strength read off its estimated signal.
inline double default_threshold_lambda(Index d, Index T, double weakest_signal) {
  if (!(weakest_signal > 0.0)) throw InvalidArgument("weakest signal must be positive");
  return std::sqrt(std::log(static_cast<double>(d)) / static_cast<double>(T)) + 1.0 / weakest_signal;
}

/// Calls sink(j0, block) for column blocks of the thresholded second-moment
/// matrix (1/T) E'E. `block` holds rows 0..j0+nb-1 of columns j0..j0+nb-1,
/// i.e. the upper triangle plus the full diagonal square. Diagonal entries are
/// left at their sample values.
template <class Sink>
void for_each_thresholded_block(const Eigen::Ref<const MatrixXd>& e, const ThresholdRule& rule, Sink&& sink,
                                Index block_size = 256) {
  rule.validate();
  const Index d = e.cols();
  const double inv_t = 1.0 / static_cast<double>(e.rows());
  MatrixXd blk;
  for (Index j0 = 0; j0 < d; j0 += block_size) {
    const Index nb = std::min(block_size, d - j0);
    blk.resize(j0 + nb, nb);
    blk.noalias() = e.leftCols(j0 + nb).transpose() * e.middleCols(j0, nb);
    blk *= inv_t;
    for (Index c = 0; c < nb; ++c)
      for (Index i = 0; i < j0 + nb; ++i)
        if (i != j0 + c) blk(i, c) = apply_threshold(blk(i, c), rule);
    sink(j0, static_cast<const MatrixXd&>(blk));
  }
}

struct ThresholdedCov {
  MatrixXd matrix;
  double lambda_used = 0.0;
  ThresholdRule rule;
  Index nnz_offdiag = 0;
};

inline void check_residuals(const Eigen::Ref<const MatrixXd>& e, const char* what) {
  if (e.rows() < 2) throw InvalidArgument(std::string(what) + ": need at least 2 residual rows");
  if (e.cols() < 1) throw InvalidArgument(std::string(what) + ": residuals have no columns");
  if (!e.allFinite()) throw DataError(std::string(what) + ": residuals contain non-finite values");
}

/// Materialized d x d thresholded covariance of T x d residuals.
inline ThresholdedCov threshold_covariance(const Eigen::Ref<const MatrixXd>& residuals, ThresholdKind kind, double lambda,
                                           double a = 3.7) {
  check_residuals(residuals, "threshold_covariance");
  ThresholdRule rule{kind, lambda, a};
  rule.validate();
  const Index d = residuals.cols();
  ThresholdedCov out;
  out.rule = rule;
  out.lambda_used = lambda;
  out.matrix.resize(d, d);
  for_each_thresholded_block(residuals, rule, [&](Index j0, const MatrixXd& blk) {
    const Index nb = blk.cols();
    out.matrix.block(0, j0, j0 + nb, nb) = blk;
    out.matrix.block(j0, 0, nb, j0) = blk.topRows(j0).transpose();
    for (Index c = 0; c < nb; ++c)
      for (Index i = 0; i < j0 + c; ++i)
        if (blk(i, c) != 0.0) out.nnz_offdiag += 2;
  });
  return out;
}

/// B' T(S) B for d x r `b` and the thresholded covariance of T x d residuals,
/// computed blockwise without storing the d x d matrix. Symmetric, not repaired.
inline MatrixXd thresholded_quadratic_form(const Eigen::Ref<const MatrixXd>& b, const Eigen::Ref<const MatrixXd>& residuals,
                                           const ThresholdRule& rule) {
  check_residuals(residuals, "thresholded covariance");
  if (b.rows() != residuals.cols())
    throw DimensionError("loading matrix has " + std::to_string(b.rows()) + " rows, residuals have " +
                         std::to_string(residuals.cols()) + " columns");
  const Index r = b.cols();
  MatrixXd g = MatrixXd::Zero(r, r);
  for_each_thresholded_block(residuals, rule, [&](Index j0, const MatrixXd& blk) {
    const Index nb = blk.cols();
    const auto bj = b.middleRows(j0, nb);
    if (j0 > 0) {
      MatrixXd p = b.topRows(j0).transpose() * (blk.topRows(j0) * bj);
      g += p + p.transpose();
    }
    g.noalias() += bj.transpose() * (blk.bottomRows(nb) * bj);
  });
  return 0.5 * (g + g.transpose());
}

/// Diagonal factor variance: sum_j B_j B_j' (1/T) sum_{t<=T-h} e_jt^2.
inline MatrixXd gamma1_diagonal(const MatrixXd& b, const Eigen::Ref<const MatrixXd>& residuals, Index h = 0) {
  check_residuals(residuals, "gamma1_diagonal");
  if (b.rows() != residuals.cols())
    throw DimensionError("loading matrix has " + std::to_string(b.rows()) + " rows, residuals have " +
                         std::to_string(residuals.cols()) + " columns");
  const Index T = residuals.rows();
  if (h < 0 || h >= T) throw InvalidArgument("gamma1_diagonal: horizon out of range");
  VectorXd v = residuals.topRows(T - h).colwise().squaredNorm().transpose() / static_cast<double>(T);
  MatrixXd g = b.transpose() * v.asDiagonal() * b;
  return 0.5 * (g + g.transpose());
}

inline MatrixXd gamma1_diagonal(const CpFit& fit, const Eigen::Ref<const MatrixXd>& residuals, Index h = 0) {
  return gamma1_diagonal(b_matrix(fit), residuals, h);
}

/// Thresholded factor variance B' Sigma_T B, eigenvalues in (-1e-8, 0) clipped.
inline MatrixXd gamma2_thresholded(const MatrixXd& b, const ThresholdedCov& cov) {
  if (cov.matrix.rows() != b.rows())
    throw DimensionError("covariance is " + std::to_string(cov.matrix.rows()) + "x" + std::to_string(cov.matrix.cols()) +
                         ", loading matrix has " + std::to_string(b.rows()) + " rows");
  return psd_repair(b.transpose() * cov.matrix * b, 1e-8, "thresholded factor variance");
}

inline MatrixXd gamma2_thresholded(const CpFit& fit, const ThresholdedCov& cov) { return gamma2_thresholded(b_matrix(fit), cov); }

/// Same estimator streamed from residuals (never stores the d x d matrix).
inline MatrixXd gamma2_thresholded(const CpFit& fit, const Eigen::Ref<const MatrixXd>& residuals, const ThresholdRule& rule) {
  return psd_repair(thresholded_quadratic_form(b_matrix(fit), residuals, rule), 1e-8, "thresholded factor variance");
}

/// Cross-sectional HAC-type factor variance over the first n indices:
/// (1/n) sum_{j,l<=n} L_j L_l' (1/T) sum_t e_jt e_lt.
inline MatrixXd hac_gamma(const MatrixXd& loadings, const Eigen::Ref<const MatrixXd>& residuals, Index n) {
  check_residuals(residuals, "hac_gamma");
  const Index d = residuals.cols();
  if (loadings.rows() != d)
    throw DimensionError("loading matrix has " + std::to_string(loadings.rows()) + " rows, residuals have " +
                         std::to_string(d) + " columns");
  if (n < 1 || n > d) throw InvalidArgument("hac_gamma: window n=" + std::to_string(n) + " must lie in [1, " + std::to_string(d) + "]");
  MatrixXd u = residuals.leftCols(n) * loadings.topRows(n);
  MatrixXd g = u.transpose() * u / (static_cast<double>(n) * static_cast<double>(residuals.rows()));
  return 0.5 * (g + g.transpose());
}

/// Entry (0, q) of Toeplitz(tau, d1) (x) Toeplitz(tau, d1): tau^(q mod d1) * tau^(q div d1).
inline double kron_toeplitz_autocov(double tau, Index d1, Index q) {
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidArgument("kron_toeplitz_autocov: tau must lie in [0,1)");
  if (d1 < 1) throw InvalidArgument("kron_toeplitz_autocov: d1 must be >= 1");
  if (q < 0 || q >= d1 * d1) throw InvalidArgument("kron_toeplitz_autocov: lag out of range");
  return std::pow(tau, static_cast<double>(q % d1)) * std::pow(tau, static_cast<double>(q / d1));
}

/// Limit of the HAC estimate with window d1 on the Kronecker-Toeplitz design
/// with unit loadings: 1 + sum_{q<d1} 2 (d1-q)/d1 tau^q.
inline double kron_toeplitz_hac_limit(double tau, Index d1) {
  double v = 1.0;
  for (Index q = 1; q < d1; ++q)
    v += 2.0 * static_cast<double>(d1 - q) / static_cast<double>(d1) * std::pow(tau, static_cast<double>(q));
  return v;
}

/// Writes the nonzero entries as "i,j,value" lines (0-based indices).
inline void write_triplets(const ThresholdedCov& cov, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.precision(17);
  out << "i,j,value\n";
  for (Index j = 0; j < cov.matrix.cols(); ++j)
    for (Index i = 0; i < cov.matrix.rows(); ++i)
      if (cov.matrix(i, j) != 0.0) out << i << ',' << j << ',' << cov.matrix(i, j) << '\n';
}

}  // namespace tdi
