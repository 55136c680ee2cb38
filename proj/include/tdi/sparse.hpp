// SPDX-License-Identifier: MIT
// LASSO by coordinate descent, the factor-augmented sparse forecaster
// (MS-FASR), expanding-window penalty tuning and post-selection debiased
// intervals (PD-LASSO).
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tdi/covariance.hpp"
#include "tdi/cp_factor.hpp"
#include "tdi/error.hpp"
#include "tdi/linalg.hpp"
#include "tdi/regression.hpp"

namespace tdi {

struct LassoConfig {
  int max_sweeps = 10000;
  double tolerance = 1e-8;       // max coordinate change per sweep
  double kkt_tolerance = 1e-9;   // certification slack checked after the change test passes
  VectorXd penalty_weights;      // per-coefficient multipliers of lambda; empty means all 1, 0 means unpenalized
  VectorXd warm_start;
  bool record_objective = false;
};

/// Minimizer of (1/(2n)) ||y - X b||^2 + lambda * sum_j w_j |b_j| over n rows.
struct LassoFit {
  VectorXd coefficients;
  double lambda = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<Index> support;
  std::vector<double> objective_history;  // after every sweep when requested
};

/// Sufficient statistics of a least-squares problem: G = X'X/n, c = X'y/n, yy = y'y/n.
struct GramProblem {
  MatrixXd gram;
  VectorXd cross;
  double yy = 0.0;
  Index rows = 0;
};

inline GramProblem make_gram_problem(const VectorXd& y, const Eigen::Ref<const MatrixXd>& x) {
  if (y.size() != x.rows())
    throw DimensionError("lasso: response has " + std::to_string(y.size()) + " rows, design has " + std::to_string(x.rows()));
  if (x.rows() < 1) throw InvalidArgument("lasso: need at least one observation");
  if (!y.allFinite() || !x.allFinite()) throw DataError("lasso: non-finite input");
  GramProblem g;
  const double inv = 1.0 / static_cast<double>(x.rows());
  g.gram = MatrixXd::Zero(x.cols(), x.cols());
  g.gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), inv);
  g.gram = g.gram.selfadjointView<Eigen::Lower>();
  g.cross = x.transpose() * y * inv;
  g.yy = y.squaredNorm() * inv;
  g.rows = x.rows();
  return g;
}

namespace detail {

inline double soft(double z, double t) { return std::abs(z) > t ? std::copysign(std::abs(z) - t, z) : 0.0; }

inline double lasso_objective(const GramProblem& g, const VectorXd& beta, const VectorXd& gb, double lambda,
                              const VectorXd& weights) {
  double pen = 0.0;
  for (Index j = 0; j < beta.size(); ++j)
    if (beta(j) != 0.0) pen += weights(j) * std::abs(beta(j));
  const double rss = g.yy - 2.0 * g.cross.dot(beta) + beta.dot(gb);
  return 0.5 * std::max(rss, 0.0) + lambda * pen;
}

inline bool kkt_holds(const GramProblem& g, const VectorXd& beta, const VectorXd& gb, double lambda,
                      const VectorXd& weights, double tol) {
  for (Index j = 0; j < beta.size(); ++j) {
    const double grad = g.cross(j) - gb(j);
    const double bound = lambda * weights(j);
    if (beta(j) != 0.0) {
      if (std::abs(grad - std::copysign(bound, beta(j))) > tol) return false;
    } else if (std::abs(grad) > bound + tol) {
      return false;
    }
  }
  return true;
}

}  // namespace detail

/// Cyclic coordinate descent on precomputed Gram statistics.
inline LassoFit lasso_gram(const GramProblem& g, double lambda, const LassoConfig& cfg = {}) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lasso: lambda must be >= 0");
  const Index p = g.gram.cols();
  VectorXd weights = cfg.penalty_weights.size() ? cfg.penalty_weights : VectorXd::Ones(p);
  if (weights.size() != p) throw DimensionError("lasso: penalty weight vector has wrong length");
  if ((weights.array() < 0.0).any()) throw InvalidArgument("lasso: penalty weights must be >= 0");
  VectorXd beta = cfg.warm_start.size() == p ? cfg.warm_start : VectorXd::Zero(p);
  VectorXd gb = g.gram * beta;

  LassoFit fit;
  fit.lambda = lambda;
  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < p; ++j) {
      const double gjj = g.gram(j, j);
      double next = 0.0;
      if (gjj > 0.0) {
        const double rho = g.cross(j) - gb(j) + gjj * beta(j);
        const double bound = lambda * weights(j);
        next = std::isinf(bound) ? 0.0 : detail::soft(rho, bound) / gjj;
      }
      const double delta = next - beta(j);
      if (delta != 0.0) {
        gb.noalias() += delta * g.gram.col(j);
        beta(j) = next;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    fit.iterations = sweep;
    if (cfg.record_objective) fit.objective_history.push_back(detail::lasso_objective(g, beta, gb, lambda, weights));
    if (max_change <= cfg.tolerance) {
      gb.noalias() = g.gram * beta;
      if (detail::kkt_holds(g, beta, gb, lambda, weights, cfg.kkt_tolerance)) {
        fit.converged = true;
        break;
      }
    }
  }
  gb.noalias() = g.gram * beta;
  fit.coefficients = beta;
  fit.objective = detail::lasso_objective(g, beta, gb, lambda, weights);
  for (Index j = 0; j < p; ++j)
    if (beta(j) != 0.0) fit.support.push_back(j);
  return fit;
}

inline LassoFit lasso(const VectorXd& y, const Eigen::Ref<const MatrixXd>& x, double lambda, const LassoConfig& cfg = {}) {
  return lasso_gram(make_gram_problem(y, x), lambda, cfg);
}

/// Smallest lambda that zeroes every penalized coefficient (when no unpenalized ones are present).
inline double lambda_max(const GramProblem& g, const VectorXd& weights) {
  double m = 0.0;
  for (Index j = 0; j < g.cross.size(); ++j) {
    const double w = weights.size() ? weights(j) : 1.0;
    if (w > 0.0) m = std::max(m, std::abs(g.cross(j)) / w);
  }
  return m;
}

/// Geometric grid of `count` points from hi down to lo.
inline std::vector<double> log_grid(double hi, double lo, int count) {
  if (count < 1 || !(hi > 0.0) || !(lo > 0.0)) throw InvalidArgument("log_grid: need count >= 1 and positive endpoints");
  std::vector<double> out;
  for (int i = 0; i < count; ++i) {
    const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out.push_back(std::exp(std::log(hi) + f * (std::log(lo) - std::log(hi))));
  }
  return out;
}

struct BicChoice {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> bic;
};

/// Penalty minimizing n log(RSS/n) + |support| log n over a warm-started path
/// from lambda_max down to ratio * lambda_max.
inline BicChoice select_lambda_bic(const GramProblem& g, const LassoConfig& cfg = {}, int count = 50, double ratio = 1e-3) {
  BicChoice out;
  const double hi = lambda_max(g, cfg.penalty_weights);
  if (!(hi > 0.0)) {
    out.grid = {0.0};
    out.bic = {0.0};
    return out;
  }
  out.grid = log_grid(hi, hi * ratio, count);
  LassoConfig c = cfg;
  const double n = static_cast<double>(g.rows);
  double best = std::numeric_limits<double>::infinity();
  for (double lam : out.grid) {
    LassoFit f = lasso_gram(g, lam, c);
    c.warm_start = f.coefficients;
    const double rss = std::max(g.yy - 2.0 * g.cross.dot(f.coefficients) + f.coefficients.dot(g.gram * f.coefficients), 1e-300) * n;
    const double bic = n * std::log(rss / n) + static_cast<double>(f.support.size()) * std::log(n);
    out.bic.push_back(bic);
    if (bic < best) {
      best = bic;
      out.lambda = lam;
    }
  }
  return out;
}

struct MsFasrOptions {
  Index horizon = 1;
  /// Adds a constant to the factor block; it is projected out of w and y like the factors.
  bool intercept = true;
  /// Columns of w left unpenalized.
  std::vector<Index> unpenalized;
  LassoConfig lasso;
};

/// Quantities of steps 2-3 that do not depend on the penalty.
struct MsFasrDesign {
  MatrixXd factor_design;  // T x q: optional constant, then factors
  MatrixXd w;              // T x p
  MatrixXd vhat;           // T x p, w_t - Lambda z_t
  MatrixXd lambda_hat;     // p x q
  VectorXd beta1_star;     // q
  VectorXd target;         // y_{t+h}, t = 1..T-h
  VectorXd ytilde;         // target - z_t' beta1_star
  GramProblem gram;        // of (ytilde, vhat rows 1..T-h)
  VectorXd penalty_weights;
  Index horizon = 1;
  bool intercept = true;

  Index length() const { return factor_design.rows(); }
  Index usable() const { return target.size(); }
};

struct MsFasrFit {
  LassoFit beta0;
  VectorXd beta1_star;   // q; leading constant when the design carries one
  VectorXd beta1;        // q
  MatrixXd lambda_hat;   // p x q
  VectorXd vhat_T;
  double forecast = 0.0;
  MsFasrDesign design;
};

inline MsFasrDesign ms_fasr_design(const VectorXd& y, const MatrixXd& w, const MatrixXd& factors, const MsFasrOptions& opt) {
  const Index T = factors.rows();
  const Index p = w.cols();
  const Index h = opt.horizon;
  if (p < 1) throw InvalidArgument("MS-FASR needs at least one observed predictor");
  if (y.size() != T)
    throw DimensionError("target has " + std::to_string(y.size()) + " observations, factors have " + std::to_string(T) + " rows");
  if (w.rows() != T)
    throw DimensionError("predictors have " + std::to_string(w.rows()) + " rows, factors have " + std::to_string(T) + " rows");
  if (h < 0 || h >= T) throw InvalidArgument("horizon out of range");
  const Index q = factors.cols() + (opt.intercept ? 1 : 0);
  if (T - h <= q) throw InvalidArgument("MS-FASR: T - h must exceed the factor count");

  MsFasrDesign d;
  d.horizon = h;
  d.intercept = opt.intercept;
  d.w = w;
  d.factor_design.resize(T, q);
  if (opt.intercept) d.factor_design.col(0).setOnes();
  d.factor_design.rightCols(factors.cols()) = factors;

  std::vector<std::string> names;
  if (opt.intercept) names.push_back("constant");
  for (Index j = 0; j < factors.cols(); ++j) names.push_back("factor" + std::to_string(j));
  const MatrixXd& z = d.factor_design;
  MatrixXd ginv = spd_inverse(z.transpose() * z, "MS-FASR factor projection", names);
  d.lambda_hat = (ginv * (z.transpose() * w)).transpose();
  d.vhat = w - z * d.lambda_hat.transpose();

  const Index n = T - h;
  d.target = y.tail(n);
  auto zn = z.topRows(n);
  MatrixXd gn = spd_inverse(zn.transpose() * zn, "MS-FASR factor regression", names);
  d.beta1_star = gn * (zn.transpose() * d.target);
  d.ytilde = d.target - zn * d.beta1_star;
  d.gram = make_gram_problem(d.ytilde, d.vhat.topRows(n));
  d.penalty_weights = VectorXd::Ones(p);
  for (Index j : opt.unpenalized) {
    if (j < 0 || j >= p) throw InvalidArgument("unpenalized column " + std::to_string(j) + " out of range");
    d.penalty_weights(j) = 0.0;
  }
  return d;
}

/// Steps 4-5 for one penalty value.
inline MsFasrFit ms_fasr_finish(const MsFasrDesign& d, double lambda, const LassoConfig& cfg = {}) {
  LassoConfig c = cfg;
  c.penalty_weights = d.penalty_weights;
  MsFasrFit fit;
  fit.beta0 = lasso_gram(d.gram, lambda, c);
  fit.beta1_star = d.beta1_star;
  fit.lambda_hat = d.lambda_hat;
  fit.beta1 = d.beta1_star - d.lambda_hat.transpose() * fit.beta0.coefficients;
  fit.vhat_T = d.vhat.row(d.length() - 1).transpose();
  fit.forecast = fit.beta0.coefficients.dot(fit.vhat_T) +
                 d.beta1_star.dot(d.factor_design.row(d.length() - 1).transpose());
  fit.design = d;
  return fit;
}

inline MsFasrFit ms_fasr(const VectorXd& y, const MatrixXd& w, const MatrixXd& factors, double lambda,
                         const MsFasrOptions& opt = {}) {
  return ms_fasr_finish(ms_fasr_design(y, w, factors, opt), lambda, opt.lasso);
}

/// sqrt(log d / T) + 1/s_r.
inline double default_msfasr_lambda(const CpFit& cp) {
  return std::sqrt(std::log(static_cast<double>(dims_product(cp.dims))) / static_cast<double>(cp.length())) +
         1.0 / cp.signals(cp.rank - 1);
}

/// Estimates factors by CC-ISO, then runs MS-FASR. A negative lambda selects the default.
inline MsFasrFit ms_fasr(const VectorXd& y, const MatrixXd& w, const TensorSeries& s, Index r, double lambda,
                         const MsFasrOptions& opt = {}, const CcIsoConfig& cc = {}) {
  CpFit cp = cc_iso(s, r, cc);
  return ms_fasr(y, w, cp.factors, lambda < 0.0 ? default_msfasr_lambda(cp) : lambda, opt);
}

struct EvOptions {
  double gamma_split = 0.8;
  bool freeze_factors = false;
  MsFasrOptions msfasr;
  CcIsoConfig cc;
};

struct EvResult {
  double lambda = 0.0;
  std::vector<double> grid;  // ascending
  std::vector<double> mse;
  Index validation_size = 0;
};

/// Expanding-window validation: for each origin tau in the validation window the
/// model is refit on 1..tau and forecasts y_{tau+h}; returns the penalty with the
/// smallest mean squared error (smallest penalty on ties).
inline EvResult tune_lambda_ev(const VectorXd& y, const MatrixXd& w, const TensorSeries& s, Index r,
                               std::vector<double> grid, const EvOptions& opt = {}) {
  if (grid.empty()) throw InvalidArgument("tune_lambda_ev: empty penalty grid");
  for (double g : grid)
    if (!(g >= 0.0)) throw InvalidArgument("tune_lambda_ev: penalties must be >= 0");
  if (!(opt.gamma_split > 0.0 && opt.gamma_split < 1.0)) throw InvalidArgument("tune_lambda_ev: split must lie in (0,1)");
  const Index T = s.length();
  const Index h = opt.msfasr.horizon;
  if (y.size() != T || w.rows() != T) throw DimensionError("tune_lambda_ev: target/predictors not aligned with the series");
  const Index n_train = static_cast<Index>(std::ceil(opt.gamma_split * static_cast<double>(T)));
  // origins tau (1-based) so that tau + h runs over n_train+1 .. T
  const Index first = n_train + 1 - h;
  const Index last = T - h;
  if (last < first || first < 1) throw InvalidArgument("tune_lambda_ev: validation window is empty");
  std::sort(grid.begin(), grid.end());

  EvResult out;
  out.grid = grid;
  out.mse.assign(grid.size(), 0.0);
  out.validation_size = last - first + 1;
  MatrixXd frozen;
  if (opt.freeze_factors) frozen = cc_iso(s, r, opt.cc).factors;
  for (Index tau = first; tau <= last; ++tau) {
    MatrixXd f = opt.freeze_factors ? MatrixXd(frozen.topRows(tau)) : cc_iso(s.head(tau), r, opt.cc).factors;
    MsFasrDesign d = ms_fasr_design(y.head(tau), w.topRows(tau), f, opt.msfasr);
    const double actual = y(tau + h - 1);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double e = ms_fasr_finish(d, grid[g], opt.msfasr.lasso).forecast - actual;
      out.mse[g] += e * e;
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out.mse[g] /= static_cast<double>(out.validation_size);
    if (out.mse[g] < out.mse[best]) best = g;
  }
  out.lambda = grid[best];
  return out;
}

/// `count` penalties spaced geometrically over [center/4, 4*center].
inline std::vector<double> default_lambda_grid(double center, int count = 8) {
  return log_grid(4.0 * center, center / 4.0, count);
}

struct NodewiseResult {
  MatrixXd theta;  // |S| x p
  VectorXd tau2;
  std::vector<MatrixXd::Index> selected;
};

/// Nodewise LASSO rows for the selected columns. Node j solves
/// (1/n)||V_j - V_{-j} g||^2 + lambda_j ||g||_1.
inline NodewiseResult nodewise_precision(const Eigen::Ref<const MatrixXd>& vhat, const std::vector<Index>& selected,
                                         const std::vector<double>& lambdas, const LassoConfig& cfg = {}) {
  const Index p = vhat.cols();
  if (selected.empty()) throw InvalidArgument("nodewise_precision: empty selection");
  if (p < 2) throw InvalidArgument("nodewise_precision: need at least two columns");
  if (lambdas.size() != selected.size()) throw DimensionError("nodewise_precision: one penalty per selected column required");
  const double n = static_cast<double>(vhat.rows());
  MatrixXd gram = vhat.transpose() * vhat / n;
  NodewiseResult out;
  out.selected = selected;
  out.theta = MatrixXd::Zero(static_cast<Index>(selected.size()), p);
  out.tau2.resize(static_cast<Index>(selected.size()));
  for (std::size_t s = 0; s < selected.size(); ++s) {
    const Index j = selected[s];
    if (j < 0 || j >= p) throw InvalidArgument("nodewise_precision: selected index out of range");
    std::vector<Index> rest;
    for (Index k = 0; k < p; ++k)
      if (k != j) rest.push_back(k);
    GramProblem g;
    g.rows = vhat.rows();
    g.gram = gram(rest, rest);
    g.cross = gram(rest, j);
    g.yy = gram(j, j);
    LassoConfig c = cfg;
    c.penalty_weights.resize(0);
    c.warm_start.resize(0);
    LassoFit f = lasso_gram(g, lambdas[s] / 2.0, c);
    const VectorXd& gam = f.coefficients;
    const double rss = std::max(g.yy - 2.0 * g.cross.dot(gam) + gam.dot(g.gram * gam), 0.0);
    const double tau2 = rss + lambdas[s] * gam.lpNorm<1>();
    if (!(tau2 > 1e-12)) throw NumericalError("nodewise_precision: degenerate residual for column " + std::to_string(j));
    const auto si = static_cast<Index>(s);
    out.tau2(si) = tau2;
    out.theta(si, j) = 1.0 / tau2;
    for (std::size_t k = 0; k < rest.size(); ++k) out.theta(si, rest[k]) = -gam(static_cast<Index>(k)) / tau2;
  }
  return out;
}

struct PdLassoOptions {
  /// Nodewise penalty shared by every selected column.
  double nodewise_lambda = 0.1;
  /// Threshold for the score covariance; negative means sqrt(log p / n).
  double omega_lambda = -1.0;
  ThresholdKind omega_rule = ThresholdKind::scad;
  LassoConfig lasso;
};

struct PdLassoState {
  std::vector<Index> selected;
  MatrixXd theta_hat;
  VectorXd tau2;
  VectorXd beta0_debiased;
  VectorXd beta1;  // re-estimated factor-block coefficients (q)
  double var_beta0 = 0.0;
  double var_beta1 = 0.0;
  double var_factor = 0.0;
};

struct PdLassoResult {
  PredictionInterval interval;
  PdLassoState state;
};

/// sqrt(log d / T) + sqrt(1/s_r).
inline double default_nodewise_lambda(const CpFit& cp) {
  return std::sqrt(std::log(static_cast<double>(dims_product(cp.dims))) / static_cast<double>(cp.length())) +
         std::sqrt(1.0 / cp.signals(cp.rank - 1));
}

/// Debiases the selected coefficients, refits the factor block and builds the
/// three-part variance. `gamma` is the r x r factor variance B' Sigma B and
/// `signals` the estimated signal strengths. An empty selection leaves only
/// the factor-block terms.
inline PdLassoResult pd_lasso_interval(const MsFasrFit& fit, const VectorXd& signals, const MatrixXd& gamma,
                                       const VectorXd& w_T, double level, const PdLassoOptions& opt = {}) {
  const MsFasrDesign& d = fit.design;
  const Index T = d.length();
  const Index n = d.usable();
  const Index p = d.w.cols();
  const Index q = d.factor_design.cols();
  const Index r = q - (d.intercept ? 1 : 0);
  if (w_T.size() != p) throw DimensionError("w_T has length " + std::to_string(w_T.size()) + ", expected " + std::to_string(p));
  if (signals.size() != r || gamma.rows() != r || gamma.cols() != r)
    throw DimensionError("factor variance inputs must match the factor count " + std::to_string(r));
  const double Td = static_cast<double>(T);
  interval_quantile(level);

  PdLassoResult out;
  PdLassoState& st = out.state;
  st.selected = fit.beta0.support;
  st.beta0_debiased = fit.beta0.coefficients;
  auto vn = d.vhat.topRows(n);
  if (!st.selected.empty()) {
    NodewiseResult nw = nodewise_precision(vn, st.selected, std::vector<double>(st.selected.size(), opt.nodewise_lambda), opt.lasso);
    st.theta_hat = nw.theta;
    st.tau2 = nw.tau2;
    VectorXd score = vn.transpose() * (d.ytilde - vn * fit.beta0.coefficients) / static_cast<double>(n);
    VectorXd shift = nw.theta * score;
    for (std::size_t s = 0; s < st.selected.size(); ++s) st.beta0_debiased(st.selected[s]) += shift(static_cast<Index>(s));
  }

  auto zn = d.factor_design.topRows(n);
  VectorXd partial = d.target - d.w.topRows(n) * st.beta0_debiased;
  MatrixXd gram = zn.transpose() * zn / Td;
  MatrixXd ginv = spd_inverse(gram, "PD-LASSO factor refit");
  st.beta1 = ginv * (zn.transpose() * partial / Td);
  VectorXd eps = partial - zn * st.beta1;

  const VectorXd z_T = d.factor_design.row(T - 1).transpose();
  const double point = w_T.dot(st.beta0_debiased) + z_T.dot(st.beta1);

  MatrixXd zw = zn.array().colwise() * eps.array();
  MatrixXd avar = ginv * (zw.transpose() * zw / Td) * ginv;
  st.var_beta1 = z_T.dot(avar * z_T) / Td;

  const VectorXd u = st.beta1.tail(r).cwiseQuotient(signals);
  st.var_factor = u.dot(gamma * u);

  if (!st.selected.empty()) {
    MatrixXd scores = vn.array().colwise() * eps.array();
    const double lam = opt.omega_lambda >= 0.0
                           ? opt.omega_lambda
                           : std::sqrt(std::log(static_cast<double>(std::max<Index>(p, 2))) / static_cast<double>(n));
    ThresholdedCov omega = threshold_covariance(scores, opt.omega_rule, lam);
    VectorXd vts(static_cast<Index>(st.selected.size()));
    for (std::size_t s = 0; s < st.selected.size(); ++s) vts(static_cast<Index>(s)) = fit.vhat_T(st.selected[s]);
    MatrixXd m = st.theta_hat * omega.matrix * st.theta_hat.transpose();
    st.var_beta0 = vts.dot(m * vts) / Td;
  }
  out.interval = make_interval(point, st.var_beta0 + st.var_beta1, st.var_factor, level);
  return out;
}

inline PdLassoResult pd_lasso_interval(const MsFasrFit& fit, const CpFit& cp, const ThresholdedCov& cov,
                                       const VectorXd& w_T, double level, const PdLassoOptions& opt = {}) {
  return pd_lasso_interval(fit, cp.signals, gamma2_thresholded(cp, cov), w_T, level, opt);
}

}  // namespace tdi
