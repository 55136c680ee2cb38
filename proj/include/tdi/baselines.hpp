// SPDX-License-Identifier: MIT
// Principal components on the vectorized series and its prediction interval.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "tdi/covariance.hpp"
#include "tdi/error.hpp"
#include "tdi/linalg.hpp"
#include "tdi/regression.hpp"
#include "tdi/tensor.hpp"

namespace tdi {

/// Normalization: (1/T) F'F = I, loadings L = X F / T carry the scale, so that
/// L'L/d equals diag(eigenvalues).
struct PcaFit {
  MatrixXd loadings;  // d x r
  MatrixXd factors;   // T x r
  VectorXd eigenvalues;  // top r of (1/(dT)) sum_t x_t x_t'
  Index rank = 0;
};

inline PcaFit pca_fit(const TensorSeries& s, Index r) {
  const MatrixXd& x = s.matrix();
  const Index d = x.rows();
  const Index T = x.cols();
  if (r < 1 || r > std::min(d, T))
    throw InvalidArgument("PCA rank " + std::to_string(r) + " must lie in [1, " + std::to_string(std::min(d, T)) + "]");
  const double dT = static_cast<double>(d) * static_cast<double>(T);
  PcaFit fit;
  fit.rank = r;
  if (T <= d) {
    MatrixXd g = MatrixXd::Zero(T, T);
    g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), 1.0 / dT);
    EigenPairs ep = top_eigenpairs(g, r);
    fit.eigenvalues = ep.values;
    fit.factors = std::sqrt(static_cast<double>(T)) * ep.vectors;
  } else {
    MatrixXd c = MatrixXd::Zero(d, d);
    c.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0 / dT);
    EigenPairs ep = top_eigenpairs(c, r);
    fit.eigenvalues = ep.values;
    fit.factors.resize(T, r);
    for (Index j = 0; j < r; ++j) {
      if (!(ep.values(j) > 0.0)) throw NumericalError("PCA: non-positive eigenvalue among the top " + std::to_string(r));
      fit.factors.col(j) = x.transpose() * ep.vectors.col(j) / std::sqrt(static_cast<double>(d) * ep.values(j));
    }
  }
  if ((fit.eigenvalues.array() <= 0.0).any()) throw NumericalError("PCA: non-positive eigenvalue among the top " + std::to_string(r));
  fit.loadings = x * fit.factors / static_cast<double>(T);
  VectorXd signs = normalize_column_signs(fit.loadings);
  fit.factors = fit.factors * signs.asDiagonal();
  return fit;
}

/// T x d residuals x_t - L f_t.
inline MatrixXd pca_residual_matrix(const TensorSeries& s, const PcaFit& fit) {
  if (fit.loadings.rows() != s.slice_size() || fit.factors.rows() != s.length())
    throw DimensionError("PCA fit does not match the series");
  MatrixXd e = s.matrix().transpose();
  e.noalias() -= fit.factors * fit.loadings.transpose();
  return e;
}

enum class PcaGamma { threshold, hac };

struct PcaIntervalOptions {
  PcaGamma gamma = PcaGamma::threshold;
  Index horizon = 1;
  double level = 0.95;
  ThresholdRule rule{ThresholdKind::scad, -1.0, 3.7};  // negative lambda: sqrt(log d/T) + sqrt(1/d)
  Index hac_window = 0;                                // 0: floor(min(sqrt d, sqrt T))
};

/// Factor variance for the PCA interval: L' Sigma_T L / d, or the HAC form.
inline MatrixXd pca_gamma(const TensorSeries& s, const PcaFit& fit, const PcaIntervalOptions& opt) {
  MatrixXd e = pca_residual_matrix(s, fit);
  const Index d = s.slice_size();
  const Index T = s.length();
  if (opt.gamma == PcaGamma::hac) {
    Index n = opt.hac_window;
    if (n == 0)
      n = std::max<Index>(1, static_cast<Index>(std::floor(std::min(std::sqrt(static_cast<double>(d)), std::sqrt(static_cast<double>(T))))));
    return hac_gamma(fit.loadings, e, n);
  }
  ThresholdRule rule = opt.rule;
  if (rule.lambda < 0.0)
    rule.lambda = std::sqrt(std::log(static_cast<double>(d)) / static_cast<double>(T)) + std::sqrt(1.0 / static_cast<double>(d));
  return psd_repair(thresholded_quadratic_form(fit.loadings, e, rule) / static_cast<double>(d), 1e-8,
                    "PCA thresholded factor variance");
}

/// Interval with variance (1/T) z' Avar z + (1/d) beta1' V^{-1} Gamma V^{-1} beta1.
inline PredictionInterval pca_prediction_interval(const DiffusionFit& ols, const PcaFit& fit, const MatrixXd& gamma,
                                                  const VectorXd& w_T, Index d, double level) {
  return interval_from_parts(ols, w_T, fit.factors.row(fit.factors.rows() - 1).transpose(), fit.eigenvalues, gamma, level,
                             1.0 / static_cast<double>(d));
}

inline PredictionInterval pca_prediction_interval(const TensorSeries& s, const PcaFit& fit, const VectorXd& y,
                                                  const MatrixXd& w, const PcaIntervalOptions& opt = {}) {
  DiffusionFit ols = fit_ols(y, w, fit.factors, opt.horizon, AvarMode::hetero);
  MatrixXd gamma = pca_gamma(s, fit, opt);
  return pca_prediction_interval(ols, fit, gamma, w.row(w.rows() - 1).transpose(), s.slice_size(), opt.level);
}

}  // namespace tdi
