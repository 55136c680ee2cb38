// SPDX-License-Identifier: MIT
// Named Monte Carlo experiments. Each factory reads a JSON object of overrides,
// rejects unknown keys and returns a runnable spec whose config echoes every
// resolved setting.
#pragma once

#include <json.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tdi/baselines.hpp"
#include "tdi/covariance.hpp"
#include "tdi/cp_factor.hpp"
#include "tdi/error.hpp"
#include "tdi/regression.hpp"
#include "tdi/sim/dgp.hpp"
#include "tdi/sim/harness.hpp"
#include "tdi/sparse.hpp"

namespace tdi::sim {

/// Reads overrides with defaults and records what was used.
class Params {
 public:
  Params(std::string experiment, json overrides) : name_(std::move(experiment)), in_(std::move(overrides)) {
    if (in_.is_null()) in_ = json::object();
    if (!in_.is_object()) throw InvalidArgument("experiment config for " + name_ + " must be a JSON object");
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    known_.insert(key);
    T v = fallback;
    if (in_.contains(key)) {
      try {
        v = in_.at(key).get<T>();
      } catch (const json::exception&) {
        throw InvalidArgument(name_ + ": config key '" + key + "' has the wrong type");
      }
    }
    out_[key] = v;
    return v;
  }

  bool has(const std::string& key) const { return in_.contains(key); }

  /// Throws on keys that no get() asked for; call after reading everything.
  json finish() const {
    std::string bad, valid;
    for (auto it = in_.begin(); it != in_.end(); ++it)
      if (!known_.count(it.key())) bad += (bad.empty() ? "" : ", ") + it.key();
    for (const auto& k : known_) valid += (valid.empty() ? "" : ", ") + k;
    if (!bad.empty()) throw InvalidArgument(name_ + ": unknown config key(s) " + bad + "; valid keys: " + valid);
    return out_;
  }

 private:
  std::string name_;
  json in_;
  json out_ = json::object();
  std::set<std::string> known_;
};

namespace detail {

inline Index ceil_pow(double d, double e) { return static_cast<Index>(std::ceil(std::pow(d, e))); }

/// sqrt(log d / T) + sqrt(1/d).
inline double panel_threshold(Index d, Index T) {
  return std::sqrt(std::log(static_cast<double>(d)) / static_cast<double>(T)) + std::sqrt(1.0 / static_cast<double>(d));
}

inline void require_positive_list(const std::vector<Index>& v, const std::string& what) {
  if (v.empty()) throw InvalidArgument(what + " must be a non-empty list");
  for (Index x : v)
    if (x < 1) throw InvalidArgument(what + " entries must be positive");
}

/// Settings shared by the panel designs.
struct Common {
  Index rank = 3;
  Index order = 2;
  std::vector<double> rho;
  double noise_tau = 0.5;
  double level = 0.95;
  CcIsoConfig cc;
};

inline Common read_common(Params& p) {
  Common c;
  c.rank = p.get<Index>("rank", 3);
  c.order = p.get<Index>("order", 2);
  c.rho = p.get<std::vector<double>>("rho", {0.6, 0.5, 0.4});
  c.noise_tau = p.get<double>("noise_tau", 0.5);
  c.level = p.get<double>("level", 0.95);
  c.cc.max_iterations = p.get<int>("cc_max_iterations", 100);
  c.cc.tolerance = p.get<double>("cc_tolerance", 1e-5);
  if (c.order < 2) throw InvalidArgument("order must be >= 2");
  if (static_cast<Index>(c.rho.size()) != c.rank) throw InvalidArgument("rho must have one entry per factor");
  c.cc.validate();
  interval_quantile(c.level);
  return c;
}

inline DgpConfig base_dgp(const Common& c, Index dk, Index T, double alpha) {
  DgpConfig g;
  g.dims.assign(static_cast<std::size_t>(c.order), dk);
  g.rank = c.rank;
  g.T = T;
  g.alpha = alpha;
  g.rho = c.rho;
  g.noise_tau = c.noise_tau;
  return g;
}

/// Interval arms on a diffusion-target sample: CP with the thresholded factor
/// variance, PCA with the thresholded (T) and HAC (H) variances. Returns
/// cover/length pairs in that order, NaN for arms not requested.
inline std::vector<double> interval_arms(const DgpSample& s, const Common& c, bool cp_arm, bool pca_t, bool pca_h) {
  std::vector<double> out(6, nan);
  const Index d = s.series.slice_size();
  const Index T = s.series.length();
  const double truth = s.truth.conditional_mean;
  const VectorXd w_T = s.truth.w.row(T - 1).transpose();
  const ThresholdRule rule{ThresholdKind::scad, panel_threshold(d, T), 3.7};
  if (cp_arm) {
    CpFit cp = cc_iso(s.series, c.rank, c.cc);
    DiffusionFit ols = fit_ols(s.truth.y, s.truth.w, cp, 1);
    MatrixXd gamma = gamma2_thresholded(cp, residual_matrix(s.series, cp), rule);
    PredictionInterval pi = prediction_interval(ols, cp, gamma, w_T, c.level);
    out[0] = pi.covers(truth) ? 1.0 : 0.0;
    out[1] = pi.length();
  }
  if (pca_t || pca_h) {
    PcaFit pca = pca_fit(s.series, c.rank);
    DiffusionFit ols = fit_ols(s.truth.y, s.truth.w, pca.factors, 1);
    PcaIntervalOptions po;
    po.level = c.level;
    po.rule = rule;
    if (pca_t) {
      po.gamma = PcaGamma::threshold;
      PredictionInterval pi = pca_prediction_interval(ols, pca, pca_gamma(s.series, pca, po), w_T, d, c.level);
      out[2] = pi.covers(truth) ? 1.0 : 0.0;
      out[3] = pi.length();
    }
    if (pca_h) {
      po.gamma = PcaGamma::hac;
      PredictionInterval pi = pca_prediction_interval(ols, pca, pca_gamma(s.series, pca, po), w_T, d, c.level);
      out[4] = pi.covers(truth) ? 1.0 : 0.0;
      out[5] = pi.length();
    }
  }
  return out;
}

/// MS-FASR at the rate-level penalty sqrt(log d/T) + 1/s_r. Returns
/// ||beta0_hat - beta0||_1 and |forecast - conditional mean|.
inline std::pair<double, double> msfasr_errors(const DgpSample& s, const Common& c) {
  CpFit cp = cc_iso(s.series, c.rank, c.cc);
  MsFasrFit fit = ms_fasr(s.truth.y, s.truth.w, cp.factors, default_msfasr_lambda(cp));
  return {(fit.beta0.coefficients - s.truth.beta0).lpNorm<1>(), std::abs(fit.forecast - s.truth.conditional_mean)};
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// ||f_hat_T - H f_T|| over a (d_k, alpha, T) grid.
inline ExperimentSpec factor_consistency_experiment(const json& overrides) {
  Params p("factor_consistency", overrides);
  auto dks = p.get<std::vector<Index>>("dk", {20, 40, 60, 80});
  auto alphas = p.get<std::vector<double>>("alpha", {0.6, 0.5, 0.4});
  auto Ts = p.get<std::vector<Index>>("T", {300, 400, 500});
  detail::Common c = detail::read_common(p);
  detail::require_positive_list(dks, "dk");
  detail::require_positive_list(Ts, "T");
  ExperimentSpec spec;
  spec.name = "factor_consistency";
  spec.config = p.finish();
  spec.metrics = {"factor_error", "iterations", "converged"};
  for (Index T : Ts)
    for (double a : alphas)
      for (Index dk : dks) {
        DgpConfig g = detail::base_dgp(c, dk, T, a);
        g.target = TargetLaw::none;
        g.validate();
        spec.cells.push_back({json{{"T", T}, {"alpha", a}, {"dk", dk}}, [g, c](std::uint64_t seed) {
                                DgpSample s = generate(g, seed);
                                CpFit cp = align_to_truth(cc_iso(s.series, c.rank, c.cc), s.truth);
                                VectorXd e = scaled_factor_error(cp, s.truth, g.T - 1);
                                return std::vector<double>{e.norm(), static_cast<double>(cp.iterations_used), cp.converged ? 1.0 : 0.0};
                              }});
      }
  spec.plot_columns = {"label:T", "label:alpha", "label:dk", "mean:factor_error", "se:factor_error"};
  return spec;
}

/// Standardized factor error Gamma^{-1/2} S_hat (f_hat_T - H f_T), per component.
inline ExperimentSpec factor_normality_experiment(const json& overrides) {
  Params p("factor_normality", overrides);
  auto dks = p.get<std::vector<Index>>("dk", {40, 60, 80});
  auto alphas = p.get<std::vector<double>>("alpha", {0.6});
  const Index T_fixed = p.get<Index>("T", 0);  // 0: 800 + ceil(d^{3/4})
  detail::Common c = detail::read_common(p);
  detail::require_positive_list(dks, "dk");
  ExperimentSpec spec;
  spec.name = "factor_normality";
  spec.config = p.finish();
  for (Index i = 0; i < c.rank; ++i) spec.metrics.push_back("z" + std::to_string(i + 1));
  for (Index i = 0; i < c.rank; ++i) spec.metrics.push_back("covered" + std::to_string(i + 1));
  for (double a : alphas)
    for (Index dk : dks) {
      const Index d = static_cast<Index>(std::pow(static_cast<double>(dk), static_cast<double>(c.order)));
      const Index T = T_fixed > 0 ? T_fixed : 800 + detail::ceil_pow(static_cast<double>(d), 0.75);
      DgpConfig g = detail::base_dgp(c, dk, T, a);
      g.target = TargetLaw::none;
      g.validate();
      spec.cells.push_back({json{{"alpha", a}, {"dk", dk}, {"T", T}}, [g, c](std::uint64_t seed) {
                              DgpSample s = generate(g, seed);
                              CpFit cp = align_to_truth(cc_iso(s.series, c.rank, c.cc), s.truth);
                              const Index d = s.series.slice_size();
                              const ThresholdRule rule{ThresholdKind::scad, detail::panel_threshold(d, g.T), 3.7};
                              MatrixXd gamma = gamma2_thresholded(cp, residual_matrix(s.series, cp), rule);
                              VectorXd z = sym_inv_sqrt(gamma) * cp.signals.cwiseProduct(scaled_factor_error(cp, s.truth, g.T - 1));
                              std::vector<double> out(z.data(), z.data() + z.size());
                              const double q = normal_quantile(0.975);
                              for (Index i = 0; i < z.size(); ++i) out.push_back(std::abs(z(i)) <= q ? 1.0 : 0.0);
                              return out;
                            }});
    }
  spec.plot_columns = {"label:alpha", "label:dk", "mean:z1", "std:z1", "mean:covered1"};
  return spec;
}

/// Coverage and length of the CP and PCA prediction intervals for the diffusion target.
inline ExperimentSpec coverage_experiment(const json& overrides) {
  Params p("coverage", overrides);
  auto dks = p.get<std::vector<Index>>("dk", {40, 60, 80});
  auto alphas = p.get<std::vector<double>>("alpha", {0.6, 0.4});
  const Index T_fixed = p.get<Index>("T", 0);
  auto arms = p.get<std::vector<std::string>>("arms", {"cp", "pca_t", "pca_h"});
  detail::Common c = detail::read_common(p);
  detail::require_positive_list(dks, "dk");
  bool cp_arm = false, pt = false, ph = false;
  for (const auto& a : arms) {
    if (a == "cp")
      cp_arm = true;
    else if (a == "pca_t")
      pt = true;
    else if (a == "pca_h")
      ph = true;
    else
      throw InvalidArgument("coverage: unknown arm '" + a + "' (valid: cp, pca_t, pca_h)");
  }
  ExperimentSpec spec;
  spec.name = "coverage";
  spec.config = p.finish();
  spec.metrics = {"cp_cover", "cp_length", "pca_t_cover", "pca_t_length", "pca_h_cover", "pca_h_length"};
  for (double a : alphas)
    for (Index dk : dks) {
      const Index d = static_cast<Index>(std::pow(static_cast<double>(dk), static_cast<double>(c.order)));
      const Index T = T_fixed > 0 ? T_fixed : 800 + detail::ceil_pow(static_cast<double>(d), 0.75);
      DgpConfig g = detail::base_dgp(c, dk, T, a);
      g.validate();
      spec.cells.push_back({json{{"alpha", a}, {"dk", dk}, {"T", T}}, [g, c, cp_arm, pt, ph](std::uint64_t seed) {
                              return detail::interval_arms(generate(g, seed), c, cp_arm, pt, ph);
                            }});
    }
  spec.plot_columns = {"label:alpha", "label:dk", "mean:cp_cover", "mean:pca_t_cover", "mean:pca_h_cover", "mean:cp_length"};
  return spec;
}

/// l1 error of the sparse coefficients against p0 sqrt(log p / T).
inline ExperimentSpec msfasr_rates_experiment(const json& overrides) {
  Params p("msfasr_rates", overrides);
  const Index dk = p.get<Index>("dk", 40);
  auto alphas = p.get<std::vector<double>>("alpha", {0.6, 0.5, 0.4});
  const Index np = p.get<Index>("p", 200);
  const Index p0 = p.get<Index>("p0", 3);
  const double bval = p.get<double>("beta0_value", 0.5);
  const Index points = p.get<Index>("grid_points", 8);
  const double lo = p.get<double>("rate_min", 0.15);
  const double hi = p.get<double>("rate_max", 0.5);
  auto Ts = p.get<std::vector<Index>>("T", {});  // empty: solve p0 sqrt(log p/T) = grid value
  detail::Common c = detail::read_common(p);
  if (np < 2 || p0 < 1 || p0 > np) throw InvalidArgument("msfasr_rates: need 1 <= p0 <= p, p >= 2");
  if (Ts.empty()) {
    if (points < 2 || !(lo > 0.0 && hi > lo)) throw InvalidArgument("msfasr_rates: need grid_points >= 2 and 0 < rate_min < rate_max");
    for (Index i = 0; i < points; ++i) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
      Ts.push_back(static_cast<Index>(std::ceil(static_cast<double>(p0 * p0) * std::log(static_cast<double>(np)) / (x * x))));
    }
  }
  ExperimentSpec spec;
  spec.name = "msfasr_rates";
  spec.config = p.finish();
  spec.metrics = {"beta_l1_error", "forecast_error", "rate"};
  for (double a : alphas)
    for (Index T : Ts) {
      DgpConfig g = detail::base_dgp(c, dk, T, a);
      g.target = TargetLaw::high_dim;
      g.p = np;
      g.p0 = p0;
      g.beta0_value = bval;
      g.validate();
      const double rate = static_cast<double>(p0) * std::sqrt(std::log(static_cast<double>(np)) / static_cast<double>(T));
      spec.cells.push_back({json{{"alpha", a}, {"T", T}, {"rate", rate}}, [g, c, rate](std::uint64_t seed) {
                              auto [be, fe] = detail::msfasr_errors(generate(g, seed), c);
                              return std::vector<double>{be, fe, rate};
                            }});
    }
  spec.extra = [](const json& cells) {
    std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_alpha;
    for (const auto& cell : cells) {
      auto& xy = by_alpha[cell.at("labels").at("alpha").get<double>()];
      xy.first.push_back(cell.at("labels").at("rate").get<double>());
      xy.second.push_back(cell_stat(cell, "beta_l1_error"));
    }
    json out = json::array();
    for (const auto& [a, xy] : by_alpha) {
      LineFit f = fit_line(xy.first, xy.second);
      out.push_back({{"alpha", a}, {"intercept", num(f.intercept)}, {"slope", num(f.slope)}, {"r2", num(f.r2)}});
    }
    return json{{"rate_fit", out}};
  };
  spec.plot_columns = {"label:alpha", "label:T", "label:rate", "mean:beta_l1_error", "mean:forecast_error"};
  return spec;
}

/// PCA factor inference with cross-sectional HAC variances under
/// Kronecker-Toeplitz noise: estimated, oracle-loading and infeasible versions.
inline ExperimentSpec hac_demo_experiment(const json& overrides) {
  Params p("hac_demo", overrides);
  auto dks = p.get<std::vector<Index>>("dk", {20, 40, 60, 80, 100});
  auto settings = p.get<std::vector<int>>("setting", {1, 2});
  const double tau = p.get<double>("noise_tau", 0.6);
  const Index rank = p.get<Index>("rank", 3);
  auto rho = p.get<std::vector<double>>("rho", {0.6, 0.5, 0.4});
  detail::require_positive_list(dks, "dk");
  ExperimentSpec spec;
  spec.name = "hac_demo";
  spec.config = p.finish();
  spec.metrics = {"stat_hac", "stat_oracle", "stat_infeasible"};
  for (int setting : settings) {
    if (setting != 1 && setting != 2) throw InvalidArgument("hac_demo: setting must be 1 or 2");
    for (Index dk : dks) {
      const Index d = dk * dk;
      const double dd = static_cast<double>(d);
      DgpConfig g;
      g.dims = {dk, dk};
      g.rank = rank;
      g.rho = rho;
      g.alpha = 1.0;
      g.noise_tau = tau;
      g.loading_law = LoadingLaw::sigma_scaled;
      g.target = TargetLaw::none;
      g.keep_noise = true;
      Index n = 0;
      if (setting == 1) {
        g.T = 1000;
        n = static_cast<Index>(std::floor(std::sqrt(static_cast<double>(std::min(d, g.T)))));
      } else {
        g.T = 500 + detail::ceil_pow(dd, 0.8);
        n = detail::ceil_pow(dd, 0.75);
      }
      n = std::min(n, d);
      g.validate();
      spec.cells.push_back({json{{"setting", setting}, {"dk", dk}, {"T", g.T}, {"window", n}}, [g, n](std::uint64_t seed) {
                              DgpSample s = generate(g, seed);
                              const Index T = g.T;
                              const double dd = static_cast<double>(s.series.slice_size());
                              PcaFit pca = pca_fit(s.series, g.rank);
                              MatrixXd lam = khatri_rao_chain(s.truth.loadings) * s.truth.signals.asDiagonal();
                              const VectorXd vinv = pca.eigenvalues.cwiseInverse();
                              const MatrixXd q = pca.factors.transpose() * s.truth.factors / static_cast<double>(T);
                              auto sandwich = [&](const MatrixXd& mid) {
                                return MatrixXd(vinv.asDiagonal() * q * mid * q.transpose() * vinv.asDiagonal());
                              };
                              MatrixXd g_hat = vinv.asDiagonal() * hac_gamma(pca.loadings, pca_residual_matrix(s.series, pca), n) *
                                               vinv.asDiagonal();
                              MatrixXd g_oracle = sandwich(hac_gamma(lam, s.truth.noise.transpose(), n));
                              // Lambda' (S2 kron S1) Lambda / d from the per-mode factors
                              const Index r = g.rank;
                              MatrixXd mid = MatrixXd::Ones(r, r);
                              for (std::size_t k = 0; k < s.truth.loadings.size(); ++k) {
                                const MatrixXd& a = s.truth.loadings[k];
                                mid = mid.cwiseProduct(a.transpose() * s.truth.mode_covariances[k] * a);
                              }
                              mid = s.truth.signals.asDiagonal() * mid * s.truth.signals.asDiagonal();
                              MatrixXd g_inf = sandwich(mid / dd);
                              const VectorXd hf = vinv.asDiagonal() * q * (lam.transpose() * lam / dd) * s.truth.factors.row(0).transpose();
                              const VectorXd err = std::sqrt(dd) * (pca.factors.row(0).transpose() - hf);
                              auto first = [&](const MatrixXd& sig) { return (sym_inv_sqrt(sig) * err)(0); };
                              return std::vector<double>{first(g_hat), first(g_oracle), first(g_inf)};
                            }});
    }
  }
  spec.plot_columns = {"label:setting", "label:dk", "std:stat_hac", "std:stat_oracle", "std:stat_infeasible"};
  return spec;
}

/// (1/sqrt T)||F_hat - F H|| for CC-ISO (diagonal H) and PCA (least-squares rotation) at T = 100 + d^0.3.
inline ExperimentSpec iso_vs_pca_experiment(const json& overrides) {
  Params p("iso_vs_pca", overrides);
  auto dks = p.get<std::vector<Index>>("dk", {20, 40, 60, 80, 100});
  auto alphas = p.get<std::vector<double>>("alpha", {0.6, 0.5, 0.4});
  const Index T_fixed = p.get<Index>("T", 0);
  detail::Common c = detail::read_common(p);
  detail::require_positive_list(dks, "dk");
  ExperimentSpec spec;
  spec.name = "iso_vs_pca";
  spec.config = p.finish();
  spec.metrics = {"iso_error", "pca_error"};
  for (double a : alphas)
    for (Index dk : dks) {
      const Index d = static_cast<Index>(std::pow(static_cast<double>(dk), static_cast<double>(c.order)));
      const Index T = T_fixed > 0 ? T_fixed : 100 + detail::ceil_pow(static_cast<double>(d), 0.3);
      DgpConfig g = detail::base_dgp(c, dk, T, a);
      g.target = TargetLaw::none;
      g.validate();
      spec.cells.push_back({json{{"alpha", a}, {"dk", dk}, {"T", T}}, [g, c](std::uint64_t seed) {
                              DgpSample s = generate(g, seed);
                              const double rt = std::sqrt(static_cast<double>(g.T));
                              const MatrixXd& f = s.truth.factors;
                              CpFit cp = align_to_truth(cc_iso(s.series, c.rank, c.cc), s.truth);
                              const VectorXd h = s.truth.signals.cwiseQuotient(cp.signals);
                              const double iso = (cp.factors - f * h.asDiagonal()).norm() / rt;
                              PcaFit pca = pca_fit(s.series, c.rank);
                              const MatrixXd rot = (f.transpose() * f).ldlt().solve(f.transpose() * pca.factors);
                              const double pc = (pca.factors - f * rot).norm() / rt;
                              return std::vector<double>{iso, pc};
                            }});
    }
  spec.extra = [](const json& cells) {
    std::map<double, std::vector<std::pair<Index, std::pair<double, double>>>> by_alpha;
    for (const auto& cell : cells)
      by_alpha[cell.at("labels").at("alpha").get<double>()].push_back(
          {cell.at("labels").at("dk").get<Index>(), {cell_stat(cell, "iso_error"), cell_stat(cell, "pca_error")}});
    json out = json::array();
    for (auto& [a, v] : by_alpha) {
      std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
      out.push_back({{"alpha", a},
                     {"dk_smallest", v.front().first},
                     {"dk_largest", v.back().first},
                     {"iso_ratio", num(v.back().second.first / v.front().second.first)},
                     {"pca_ratio", num(v.back().second.second / v.front().second.second)}});
    }
    return json{{"largest_over_smallest", out}};
  };
  spec.plot_columns = {"label:alpha", "label:dk", "label:T", "mean:iso_error", "mean:pca_error"};
  return spec;
}

/// Post-double-selection interval for y_{T+1|T} with many observed predictors.
inline ExperimentSpec pdlasso_experiment(const json& overrides) {
  Params p("pdlasso", overrides);
  auto dks = p.get<std::vector<Index>>("dk", {40, 80, 100});
  auto alphas = p.get<std::vector<double>>("alpha", {1.0, 0.6, 0.4});
  const Index T_fixed = p.get<Index>("T", 0);
  const Index np = p.get<Index>("p", 100);
  const Index p0 = p.get<Index>("p0", 3);
  const double bval = p.get<double>("beta0_value", 3.0);
  const double v_tau = p.get<double>("v_tau", 0.5);
  detail::Common c = detail::read_common(p);
  detail::require_positive_list(dks, "dk");
  ExperimentSpec spec;
  spec.name = "pdlasso";
  spec.config = p.finish();
  spec.metrics = {"cover", "length", "selected", "bic_lambda"};
  for (double a : alphas)
    for (Index dk : dks) {
      const Index d = static_cast<Index>(std::pow(static_cast<double>(dk), static_cast<double>(c.order)));
      const Index T = T_fixed > 0 ? T_fixed : 800 + detail::ceil_pow(static_cast<double>(d), 0.75);
      DgpConfig g = detail::base_dgp(c, dk, T, a);
      g.target = TargetLaw::high_dim;
      g.p = np;
      g.p0 = p0;
      g.beta0_value = bval;
      g.v_tau = v_tau;
      g.validate();
      spec.cells.push_back({json{{"alpha", a}, {"dk", dk}, {"T", T}}, [g, c](std::uint64_t seed) {
                              DgpSample s = generate(g, seed);
                              CpFit cp = cc_iso(s.series, c.rank, c.cc);
                              MsFasrDesign design = ms_fasr_design(s.truth.y, s.truth.w, cp.factors, MsFasrOptions{});
                              LassoConfig lc;
                              lc.penalty_weights = design.penalty_weights;
                              BicChoice bic = select_lambda_bic(design.gram, lc);
                              MsFasrFit fit = ms_fasr_finish(design, bic.lambda);
                              const Index d = s.series.slice_size();
                              const ThresholdRule rule{ThresholdKind::scad, detail::panel_threshold(d, g.T), 3.7};
                              MatrixXd gamma = gamma2_thresholded(cp, residual_matrix(s.series, cp), rule);
                              PdLassoOptions po;
                              po.nodewise_lambda = default_nodewise_lambda(cp);
                              PdLassoResult res = pd_lasso_interval(fit, cp.signals, gamma, s.truth.w.row(g.T - 1).transpose(), c.level, po);
                              return std::vector<double>{res.interval.covers(s.truth.conditional_mean) ? 1.0 : 0.0, res.interval.length(),
                                                         static_cast<double>(res.state.selected.size()), bic.lambda};
                            }});
    }
  spec.plot_columns = {"label:alpha", "label:dk", "mean:cover", "mean:length"};
  return spec;
}

/// Departures from the baseline design at alpha = 0.6, d_k = 40: persistent
/// correlated factors, stronger noise correlation, Student-t draws, the
/// convergence-rate curve and a zero predictor-loading matrix.
inline ExperimentSpec robustness_experiment(const json& overrides) {
  Params p("robustness", overrides);
  auto designs = p.get<std::vector<std::string>>("designs", {"persistent", "kappa", "student_t", "rate", "lambda_zero"});
  const Index dk = p.get<Index>("dk", 40);
  const double alpha = p.get<double>("alpha", 0.6);
  auto persist = p.get<std::vector<double>>("persistence", {0.7, 0.8, 0.9});
  auto kappas = p.get<std::vector<double>>("kappa", {0.6, 0.7, 0.8});
  auto dfs = p.get<std::vector<double>>("df", {4.0, 5.0, 6.0});
  auto rate_dks = p.get<std::vector<Index>>("rate_dk", {20, 40, 60, 80, 100});
  const Index rate_T = p.get<Index>("rate_T", 500);
  auto zero_Ts = p.get<std::vector<Index>>("lambda_zero_T", {100, 300, 500, 700, 1000});
  const Index T_fixed = p.get<Index>("T", 0);
  const Index ms_T = p.get<Index>("msfasr_T", 500);
  const Index np = p.get<Index>("p", 200);
  const Index p0 = p.get<Index>("p0", 3);
  detail::Common c = detail::read_common(p);
  ExperimentSpec spec;
  spec.name = "robustness";
  spec.config = p.finish();
  spec.metrics = {"cp_cover", "pca_t_cover", "pca_h_cover", "msfasr_forecast_error", "msfasr_beta_error", "factor_error"};
  const Index d0 = static_cast<Index>(std::pow(static_cast<double>(dk), static_cast<double>(c.order)));
  const Index cov_T = T_fixed > 0 ? T_fixed : 800 + detail::ceil_pow(static_cast<double>(d0), 0.75);

  // coverage arms on the diffusion target plus MS-FASR on a high-dimensional target
  auto add_perturbed = [&](const std::string& name, double value, const std::function<void(DgpConfig&)>& tweak) {
    DgpConfig cov = detail::base_dgp(c, dk, cov_T, alpha);
    tweak(cov);
    DgpConfig ms = detail::base_dgp(c, dk, ms_T, alpha);
    ms.target = TargetLaw::high_dim;
    ms.p = np;
    ms.p0 = p0;
    tweak(ms);
    cov.validate();
    ms.validate();
    spec.cells.push_back({json{{"design", name}, {"value", value}}, [cov, ms, c](std::uint64_t seed) {
                            std::vector<double> arms = detail::interval_arms(generate(cov, seed), c, true, true, true);
                            auto [be, fe] = detail::msfasr_errors(generate(ms, seed ^ 0x5bd1e995ULL), c);
                            return std::vector<double>{arms[0], arms[2], arms[4], fe, be, nan};
                          }});
  };
  std::set<std::string> valid{"persistent", "kappa", "student_t", "rate", "lambda_zero"};
  for (const auto& dsg : designs) {
    if (!valid.count(dsg)) throw InvalidArgument("robustness: unknown design '" + dsg + "' (valid: kappa, lambda_zero, persistent, rate, student_t)");
    if (dsg == "persistent") {
      for (double v : persist)
        add_perturbed(dsg, v, [v](DgpConfig& g) {
          g.rho.assign(static_cast<std::size_t>(g.rank), v);
          g.factor_law = FactorLaw::correlated_ar;
        });
    } else if (dsg == "kappa") {
      for (double v : kappas) add_perturbed(dsg, v, [v](DgpConfig& g) { g.noise_tau = v; });
    } else if (dsg == "student_t") {
      for (double v : dfs)
        add_perturbed(dsg, v, [v](DgpConfig& g) {
          g.noise = NoiseLaw::student_t;
          g.df = v;
        });
    } else if (dsg == "rate") {
      for (Index k : rate_dks) {
        DgpConfig g = detail::base_dgp(c, k, rate_T, alpha);
        g.factor_law = FactorLaw::iid_normal;
        g.target = TargetLaw::none;
        g.validate();
        spec.cells.push_back({json{{"design", dsg}, {"value", static_cast<double>(k)}}, [g, c](std::uint64_t seed) {
                                DgpSample s = generate(g, seed);
                                CpFit cp = align_to_truth(cc_iso(s.series, c.rank, c.cc), s.truth);
                                const double e = scaled_factor_error(cp, s.truth, g.T - 1).norm();
                                return std::vector<double>{nan, nan, nan, nan, nan, e};
                              }});
      }
    } else {
      for (Index T : zero_Ts) {
        DgpConfig g = detail::base_dgp(c, dk, T, alpha);
        g.target = TargetLaw::high_dim;
        g.p = np;
        g.p0 = p0;
        g.zero_lambda = true;
        g.validate();
        spec.cells.push_back({json{{"design", dsg}, {"value", static_cast<double>(T)}}, [g, c](std::uint64_t seed) {
                                auto [be, fe] = detail::msfasr_errors(generate(g, seed), c);
                                return std::vector<double>{nan, nan, nan, fe, be, nan};
                              }});
      }
    }
  }
  const double order = static_cast<double>(c.order);
  spec.extra = [rate_T, order](const json& cells) {
    // err ~ c0 sqrt(1/(d^0.1 T)) + c1 / d^0.3, least squares without intercept
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
    int n = 0;
    for (const auto& cell : cells) {
      if (cell.at("labels").at("design") != "rate") continue;
      const double e = cell_stat(cell, "factor_error");
      if (!std::isfinite(e)) continue;
      const double d = std::pow(cell.at("labels").at("value").get<double>(), order);
      const double x1 = std::sqrt(1.0 / (std::pow(d, 0.1) * static_cast<double>(rate_T)));
      const double x2 = 1.0 / std::pow(d, 0.3);
      a11 += x1 * x1;
      a12 += x1 * x2;
      a22 += x2 * x2;
      b1 += x1 * e;
      b2 += x2 * e;
      ++n;
    }
    const double det = a11 * a22 - a12 * a12;
    if (n < 2 || std::abs(det) < 1e-300) return json{{"rate_curve", nullptr}};
    return json{{"rate_curve", {{"c0", (a22 * b1 - a12 * b2) / det}, {"c1", (a11 * b2 - a12 * b1) / det}}}};
  };
  spec.plot_columns = {"label:design", "label:value", "mean:cp_cover", "mean:pca_t_cover", "mean:pca_h_cover",
                       "mean:msfasr_forecast_error", "mean:factor_error"};
  return spec;
}

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"factor_consistency", "factor_normality", "coverage", "msfasr_rates",
                                              "hac_demo",           "iso_vs_pca",       "pdlasso",  "robustness"};
  return names;
}

inline ExperimentSpec make_experiment(const std::string& name, const json& overrides = json::object()) {
  if (name == "factor_consistency") return factor_consistency_experiment(overrides);
  if (name == "factor_normality") return factor_normality_experiment(overrides);
  if (name == "coverage") return coverage_experiment(overrides);
  if (name == "msfasr_rates") return msfasr_rates_experiment(overrides);
  if (name == "hac_demo") return hac_demo_experiment(overrides);
  if (name == "iso_vs_pca") return iso_vs_pca_experiment(overrides);
  if (name == "pdlasso") return pdlasso_experiment(overrides);
  if (name == "robustness") return robustness_experiment(overrides);
  std::string valid;
  for (const auto& n : experiment_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw InvalidArgument("unknown experiment '" + name + "'; valid names: " + valid);
}

}  // namespace tdi::sim
