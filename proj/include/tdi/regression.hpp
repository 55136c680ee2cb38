// SPDX-License-Identifier: MIT
// Diffusion-index OLS, point forecast and normal prediction interval.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "tdi/cp_factor.hpp"
#include "tdi/error.hpp"
#include "tdi/linalg.hpp"

namespace tdi {

enum class AvarMode { hetero, homo };

/// y_{t+h} = beta0' w_t + beta1' f_t + eps_{t+h}, fitted by OLS over t = 1..T-h.
/// Sample moments are divided by T; the residual variance by T-h.
struct DiffusionFit {
  VectorXd beta0;      // p, coefficients on observed predictors
  VectorXd beta1;      // r, coefficients on factors
  VectorXd residuals;  // T-h
  Index horizon = 0;
  Index sample_size = 0;  // T
  MatrixXd avar_beta;     // (p+r) x (p+r)
  AvarMode avar_mode = AvarMode::hetero;
  double sigma2_eps = 0.0;

  VectorXd coefficients() const {
    VectorXd c(beta0.size() + beta1.size());
    c << beta0, beta1;
    return c;
  }
};

struct PredictionInterval {
  double point = 0.0;
  double std = 0.0;
  double level = 0.95;
  double lower = 0.0;
  double upper = 0.0;
  double beta_term = 0.0;
  double factor_term = 0.0;

  double length() const { return upper - lower; }
  bool covers(double value) const { return lower <= value && value <= upper; }
};

inline double interval_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("interval level must lie in (0,1), got " + std::to_string(level));
  return normal_quantile(1.0 - (1.0 - level) / 2.0);
}

/// Assembles a symmetric normal interval from a point forecast and variance summands.
inline PredictionInterval make_interval(double point, double beta_term, double factor_term, double level) {
  const double q = interval_quantile(level);
  auto clamp = [](double v, const char* name) {
    if (!std::isfinite(v)) throw NumericalError(std::string("prediction interval: ") + name + " is not finite");
    if (v < -1e-10) throw NumericalError(std::string("prediction interval: ") + name + " is negative (" + std::to_string(v) + ")");
    return v < 0.0 ? 0.0 : v;
  };
  PredictionInterval pi;
  pi.point = point;
  pi.level = level;
  pi.beta_term = clamp(beta_term, "beta variance term");
  pi.factor_term = clamp(factor_term, "factor variance term");
  pi.std = std::sqrt(pi.beta_term + pi.factor_term);
  pi.lower = point - q * pi.std;
  pi.upper = point + q * pi.std;
  return pi;
}

/// OLS of y_{t+h} on (w_t, factors_t). `y` and the rows of `w` and `factors`
/// are aligned on t = 1..T; `w` may have zero columns.
inline DiffusionFit fit_ols(const VectorXd& y, const MatrixXd& w, const MatrixXd& factors, Index h,
                            AvarMode mode = AvarMode::hetero) {
  const Index T = factors.rows();
  const Index p = w.cols();
  const Index r = factors.cols();
  if (y.size() != T)
    throw DimensionError("target has " + std::to_string(y.size()) + " observations, factors have " + std::to_string(T) + " rows");
  if (w.rows() != T)
    throw DimensionError("predictors have " + std::to_string(w.rows()) + " rows, factors have " + std::to_string(T) + " rows");
  if (h < 0 || h >= T) throw InvalidArgument("horizon " + std::to_string(h) + " must satisfy 0 <= h < T = " + std::to_string(T));
  const Index n = T - h;
  if (p + r >= n)
    throw InvalidArgument("regression has " + std::to_string(p + r) + " regressors but only " + std::to_string(n) + " usable observations");

  MatrixXd z(n, p + r);
  z << w.topRows(n), factors.topRows(n);
  const VectorXd target = y.tail(n);
  const double Td = static_cast<double>(T);

  std::vector<std::string> names;
  for (Index j = 0; j < p; ++j) names.push_back("w" + std::to_string(j));
  for (Index j = 0; j < r; ++j) names.push_back("factor" + std::to_string(j));
  MatrixXd gram = z.transpose() * z / Td;
  MatrixXd ginv = spd_inverse(gram, "diffusion-index OLS", names);
  VectorXd beta = ginv * (z.transpose() * target / Td);

  DiffusionFit fit;
  fit.beta0 = beta.head(p);
  fit.beta1 = beta.tail(r);
  fit.residuals = target - z * beta;
  fit.horizon = h;
  fit.sample_size = T;
  fit.avar_mode = mode;
  // Mean over the T-h residuals, so constant-magnitude residuals give hetero == homo.
  fit.sigma2_eps = fit.residuals.squaredNorm() / static_cast<double>(n);
  if (mode == AvarMode::homo) {
    fit.avar_beta = fit.sigma2_eps * ginv;
  } else {
    MatrixXd zw = z.array().colwise() * fit.residuals.array();
    MatrixXd meat = zw.transpose() * zw / Td;
    fit.avar_beta = ginv * meat * ginv;
  }
  fit.avar_beta = 0.5 * (fit.avar_beta + fit.avar_beta.transpose()).eval();
  return fit;
}

inline DiffusionFit fit_ols(const VectorXd& y, const MatrixXd& w, const CpFit& cp, Index h,
                            AvarMode mode = AvarMode::hetero) {
  return fit_ols(y, w, cp.factors, h, mode);
}

inline double forecast(const DiffusionFit& fit, const VectorXd& w_T, const VectorXd& f_T) {
  if (w_T.size() != fit.beta0.size())
    throw DimensionError("forecast: w_T has length " + std::to_string(w_T.size()) + ", expected " + std::to_string(fit.beta0.size()));
  if (f_T.size() != fit.beta1.size())
    throw DimensionError("forecast: f_T has length " + std::to_string(f_T.size()) + ", expected " + std::to_string(fit.beta1.size()));
  return fit.beta0.dot(w_T) + fit.beta1.dot(f_T);
}

/// Interval around beta' z_T with variance (1/T) z' Avar z + c * beta1' D^{-1} G D^{-1} beta1,
/// where D holds `scales` on its diagonal and c is `factor_weight`.
inline PredictionInterval interval_from_parts(const DiffusionFit& fit, const VectorXd& w_T, const VectorXd& f_T,
                                              const VectorXd& scales, const MatrixXd& gamma, double level,
                                              double factor_weight = 1.0) {
  const Index r = fit.beta1.size();
  if (gamma.rows() != r || gamma.cols() != r)
    throw DimensionError("factor variance matrix must be " + std::to_string(r) + "x" + std::to_string(r));
  if (scales.size() != r) throw DimensionError("scale vector must have length " + std::to_string(r));
  if ((scales.array() <= 0.0).any()) throw InvalidArgument("signal/eigenvalue scales must be positive");
  const double point = forecast(fit, w_T, f_T);
  VectorXd z(w_T.size() + f_T.size());
  z << w_T, f_T;
  const double beta_term = z.dot(fit.avar_beta * z) / static_cast<double>(fit.sample_size);
  const VectorXd u = fit.beta1.cwiseQuotient(scales);
  const double factor_term = factor_weight * u.dot(gamma * u);
  return make_interval(point, beta_term, factor_term, level);
}

/// Prediction interval for y_{T+h|T} built from a CP fit: f_T is the last
/// factor row and the factor term is beta1' S^{-1} Gamma S^{-1} beta1.
inline PredictionInterval prediction_interval(const DiffusionFit& fit, const CpFit& cp, const MatrixXd& gamma,
                                              const VectorXd& w_T, double level) {
  if (cp.factors.rows() < 1) throw DimensionError("CP fit has no factor rows");
  return interval_from_parts(fit, w_T, cp.factors.row(cp.factors.rows() - 1).transpose(), cp.signals, gamma, level);
}

}  // namespace tdi
