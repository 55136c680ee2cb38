// SPDX-License-Identifier: MIT
// Dense linear-algebra helpers shared by the estimators.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "tdi/error.hpp"

namespace tdi {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Leading eigenpairs of a symmetric matrix, values in descending order.
struct EigenPairs {
  VectorXd values;
  MatrixXd vectors;
};

namespace detail {

inline EigenPairs full_top_eigenpairs(const MatrixXd& m, Index k) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericalError("top_eigenpairs: eigensolver failed");
  EigenPairs out;
  out.values = es.eigenvalues().tail(k).reverse();
  out.vectors = es.eigenvectors().rightCols(k).rowwise().reverse();
  return out;
}

/// Block Krylov with full reorthogonalization and Rayleigh-Ritz on the whole
/// basis. The start block is deterministic. Returns false when the basis
/// degenerates or the Ritz residuals do not reach `tol * |lambda_1|` before the
/// basis reaches half the dimension; the caller then uses the dense solver.
inline bool krylov_top_eigenpairs(const MatrixXd& m, Index k, double tol, EigenPairs& out) {
  const Index n = m.rows();
  const Index b = std::max<Index>(k, 4);
  const Index cap = n / 2;
  auto a = m.selfadjointView<Eigen::Lower>();
  MatrixXd start(n, b);
  for (Index j = 0; j < b; ++j)
    for (Index i = 0; i < n; ++i) start(i, j) = std::cos(0.7 * static_cast<double>((i + 1) * (j + 1))) + 0.1 * static_cast<double>(j == i % b);
  MatrixXd basis(n, cap + b);
  MatrixXd image(n, cap + b);
  Index used = 0;
  auto append = [&](MatrixXd blk) {
    for (int pass = 0; pass < 2 && used > 0; ++pass) blk -= basis.leftCols(used) * (basis.leftCols(used).transpose() * blk);
    Eigen::HouseholderQR<MatrixXd> qr(blk);
    const MatrixXd r = qr.matrixQR().topRows(blk.cols()).template triangularView<Eigen::Upper>();
    const double scale = std::max(blk.norm(), 1e-300);
    for (Index j = 0; j < blk.cols(); ++j)
      if (std::abs(r(j, j)) < 1e-10 * scale) return false;
    MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, blk.cols());
    for (int pass = 0; pass < 1 && used > 0; ++pass) q -= basis.leftCols(used) * (basis.leftCols(used).transpose() * q);
    for (Index j = 0; j < q.cols(); ++j) q.col(j).normalize();
    basis.middleCols(used, q.cols()) = q;
    image.middleCols(used, q.cols()).noalias() = a * q;
    used += q.cols();
    return true;
  };
  if (!append(start)) return false;
  Index next_check = std::min<Index>(cap, std::max<Index>(4 * b, 40));
  while (true) {
    while (used < next_check) {
      if (!append(image.middleCols(used - b, b))) return false;
    }
    const auto v = basis.leftCols(used);
    const auto av = image.leftCols(used);
    MatrixXd h = v.transpose() * av;
    h = 0.5 * (h + h.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(h);
    if (es.info() != Eigen::Success) return false;
    const VectorXd theta = es.eigenvalues().tail(k).reverse();
    const MatrixXd s = es.eigenvectors().rightCols(k).rowwise().reverse();
    MatrixXd y = v * s;
    MatrixXd resid = av * s - y * theta.asDiagonal();
    const double ref = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    if (resid.colwise().norm().maxCoeff() <= tol * ref) {
      out.values = theta;
      out.vectors = std::move(y);
      return true;
    }
    if (used + b > cap) return false;
    next_check = std::min<Index>(cap, 2 * used);
    if (next_check < used + b) next_check = used + b;
  }
}

}  // namespace detail

/// Top-k eigenpairs of symmetric `m` (lower triangle is read), values descending.
/// Small or wide requests use the dense solver; large ones a block Krylov
/// method with a dense fallback.
inline EigenPairs top_eigenpairs(const MatrixXd& m, Index k) {
  const Index n = m.rows();
  if (m.cols() != n) throw DimensionError("top_eigenpairs: matrix is not square");
  if (k < 0 || k > n) throw InvalidArgument("top_eigenpairs: requested " + std::to_string(k) +
                                            " eigenpairs of a " + std::to_string(n) + "x" +
                                            std::to_string(n) + " matrix");
  EigenPairs out;
  if (k == 0) {
    out.values.resize(0);
    out.vectors.resize(n, 0);
    return out;
  }
  if (!m.allFinite()) throw NumericalError("top_eigenpairs: matrix has non-finite entries");
  if (n <= 200 || 8 * k >= n) return detail::full_top_eigenpairs(m, k);
  if (detail::krylov_top_eigenpairs(m, k, 1e-12, out)) return out;
  return detail::full_top_eigenpairs(m, k);
}

/// Flips each column so that its largest-magnitude entry is positive.
/// Returns the applied signs.
inline VectorXd normalize_column_signs(MatrixXd& cols) {
  VectorXd signs = VectorXd::Ones(cols.cols());
  for (Index j = 0; j < cols.cols(); ++j) {
    Index at = 0;
    cols.col(j).cwiseAbs().maxCoeff(&at);
    if (cols(at, j) < 0) {
      cols.col(j) = -cols.col(j);
      signs(j) = -1.0;
    }
  }
  return signs;
}

/// Sine of the angle between two lines, i.e. the spectral norm of uu' - vv' for unit vectors.
inline double sin_angle(const VectorXd& u, const VectorXd& v) {
  const VectorXd a = u.normalized(), b = v.normalized();
  return std::min(1.0, (a - a.dot(b) * b).norm());
}

/// Symmetric Toeplitz matrix with entries tau^|i-j|.
inline MatrixXd toeplitz(double tau, Index n) {
  MatrixXd t(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) t(i, j) = std::pow(tau, static_cast<double>(std::abs(i - j)));
  return t;
}

/// Symmetric square root of a PSD matrix (negative eigenvalues are clipped to zero).
inline MatrixXd sym_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericalError("sym_sqrt: eigensolver failed");
  VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Inverse symmetric square root of a positive definite matrix.
inline MatrixXd sym_inv_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericalError("sym_inv_sqrt: eigensolver failed");
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() <= 1e-14 * std::max(top, 1e-300))
    throw NumericalError("sym_inv_sqrt: matrix is not positive definite");
  VectorXd inv_root = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_root.asDiagonal() * es.eigenvectors().transpose();
}

/// Symmetrizes `m` and clips eigenvalues in (-tol, 0) to zero. Anything more
/// negative than -tol is reported as an indefinite estimate.
inline MatrixXd psd_repair(const MatrixXd& m, double tol, const std::string& what) {
  MatrixXd s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(s);
  if (es.info() != Eigen::Success) throw NumericalError(what + ": eigensolver failed");
  const double lo = es.eigenvalues().minCoeff();
  if (lo < -tol) {
    std::ostringstream os;
    os << what << ": estimate is indefinite (smallest eigenvalue " << lo << ")";
    throw NumericalError(os.str());
  }
  if (lo >= 0.0) return s;
  VectorXd vals = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

/// Inverse of a symmetric positive definite matrix with a short diagonal-jitter
/// ladder (0, 1e-12, 1e-10, relative to the mean diagonal). A matrix whose
/// smallest eigenvalue is below n * eps of the largest is treated as singular. `names` labels the
/// columns in the error raised when every rung fails.
inline MatrixXd spd_inverse(const MatrixXd& g, const std::string& what,
                            const std::vector<std::string>& names = {}) {
  const Index n = g.rows();
  if (g.cols() != n) throw DimensionError(what + ": matrix is not square");
  if (n == 0) return MatrixXd(0, 0);
  const double scale = std::max(g.diagonal().cwiseAbs().mean(), std::numeric_limits<double>::min());
  Eigen::LLT<MatrixXd> plain(g);
  if (plain.info() == Eigen::Success && plain.rcond() > 1e-13) return plain.solve(MatrixXd::Identity(n, n));
  // Jitter only rescues matrices that are not numerically rank deficient.
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  const double top = std::max(std::abs(es.eigenvalues()(n - 1)), std::numeric_limits<double>::min());
  if (es.eigenvalues()(0) > static_cast<double>(n) * std::numeric_limits<double>::epsilon() * top) {
    for (double jitter : {1e-12, 1e-10}) {
      MatrixXd a = g;
      a.diagonal().array() += jitter * scale;
      Eigen::LLT<MatrixXd> llt(a);
      if (llt.info() == Eigen::Success) return llt.solve(MatrixXd::Identity(n, n));
    }
  }
  VectorXd v = es.eigenvectors().col(0).cwiseAbs();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return v(a) > v(b); });
  std::ostringstream os;
  os << what << ": design is singular or near-collinear; involved columns:";
  for (Index i = 0; i < std::min<Index>(n, 3); ++i) {
    const Index c = order[static_cast<std::size_t>(i)];
    if (v(c) < 1e-3) break;
    os << ' ' << (static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)] : std::to_string(c));
  }
  throw NumericalError(os.str());
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal quantile: rational starting point plus one Halley step.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile: probability must lie in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double lo = 0.02425;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - lo) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace tdi
