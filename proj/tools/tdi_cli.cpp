// SPDX-License-Identifier: MIT
// tdi: estimate CP factors, forecast with diffusion indices, run simulations.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tdi/baselines.hpp"
#include "tdi/covariance.hpp"
#include "tdi/cp_factor.hpp"
#include "tdi/error.hpp"
#include "tdi/io.hpp"
#include "tdi/regression.hpp"
#include "tdi/serialize.hpp"
#include "tdi/sim/dgp.hpp"
#include "tdi/sim/experiments.hpp"
#include "tdi/sim/harness.hpp"
#include "tdi/sparse.hpp"

namespace fs = std::filesystem;
using tdi::Index;
using tdi::json;
using tdi::MatrixXd;
using tdi::VectorXd;

namespace {

// ---- config file: JSON object whose keys are flag names ----

std::vector<std::string> config_to_args(const std::string& path) {
  json j = tdi::read_json(path);
  if (!j.is_object()) throw tdi::InvalidArgument(path + ": config must be a JSON object of flag names");
  std::vector<std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string key = it.key();
    for (char& c : key)
      if (c == '_') c = '-';
    if (key == "config") throw tdi::InvalidArgument(path + ": config files cannot nest --config");
    const std::string flag = "--" + key;
    const json& v = it.value();
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back(flag);
    } else if (v.is_string()) {
      out.push_back(flag);
      out.push_back(v.get<std::string>());
    } else if (v.is_number()) {
      out.push_back(flag);
      out.push_back(v.dump());
    } else if (v.is_array() && key == "param") {
      for (const auto& e : v) {
        out.push_back(flag);
        out.push_back(e.is_string() ? e.get<std::string>() : e.dump());
      }
    } else if (v.is_object() || v.is_array()) {
      out.push_back(flag);
      out.push_back(v.dump());
    } else {
      throw tdi::InvalidArgument(path + ": unsupported value for '" + it.key() + "'");
    }
  }
  return out;
}

/// Splices config-file values in front of the command-line flags so that
/// explicit flags win under the take-last policy.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  std::size_t pos = 0;
  while (pos < args.size() && args[pos].rfind("-", 0) == 0) ++pos;
  if (pos == args.size()) return args;
  auto extra = config_to_args(*path);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(pos) + 1, extra.begin(), extra.end());
  return args;
}

// ---- shared parsing helpers ----

std::optional<Index> parse_rank(const std::string& s) {
  if (s == "auto") return std::nullopt;
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size() || v < 1) throw std::invalid_argument("");
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw tdi::InvalidArgument("--rank must be a positive integer or 'auto', got '" + s + "'");
  }
}

/// "auto" gives nullopt, "inf" infinity, otherwise a non-negative number.
std::optional<double> parse_penalty(const std::string& s, const std::string& flag) {
  if (s == "auto") return std::nullopt;
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !(v >= 0.0)) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw tdi::InvalidArgument(flag + " must be 'auto', 'inf' or a non-negative number, got '" + s + "'");
  }
}

tdi::TensorSeries load_series(const std::string& input, const std::string& dims) {
  if (fs::is_directory(input)) {
    if (!dims.empty()) throw tdi::InvalidArgument("--dims cannot be combined with a directory of slices");
    return tdi::read_series_dir(input);
  }
  std::optional<tdi::Dims> d;
  if (!dims.empty()) d = tdi::detail::parse_dims(dims);
  return tdi::read_series_csv(input, d);
}

tdi::CpFit estimate_or_load(const tdi::TensorSeries& s, const std::string& fit_path, const std::string& rank, Index r_max,
                            const tdi::CcIsoConfig& cc, json* info) {
  if (!fit_path.empty()) {
    tdi::CpFit f = tdi::cp_fit_from_json(tdi::read_json(fit_path));
    tdi::check_fit_dims(s, f);
    if (f.length() != s.length())
      throw tdi::DataError(fit_path + ": fit has " + std::to_string(f.length()) + " periods, the series has " +
                           std::to_string(s.length()));
    (*info)["rank_source"] = "fit_file";
    return f;
  }
  std::optional<Index> r = parse_rank(rank);
  if (!r) {
    const Index dmin = *std::min_element(s.dims().begin(), s.dims().end());
    const Index rm = r_max > 0 ? r_max : std::min<Index>(8, dmin - 1);
    r = tdi::select_rank(s, rm);
    (*info)["rank_source"] = "eigenvalue_ratio";
    (*info)["r_max"] = rm;
  } else {
    (*info)["rank_source"] = "user";
  }
  return tdi::cc_iso(s, *r, cc);
}

std::string join(const VectorXd& v) {
  std::ostringstream os;
  os.precision(6);
  for (Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
  return os.str();
}

// ---- estimate ----

struct EstimateArgs {
  std::string input, dims, rank = "auto", output, residuals;
  Index r_max = 0;
  int max_iter = 100;
  double tol = 1e-5;
  bool quiet = false;
};

int run_estimate(const EstimateArgs& a) {
  tdi::TensorSeries s = load_series(a.input, a.dims);
  tdi::CcIsoConfig cc;
  cc.max_iterations = a.max_iter;
  cc.tolerance = a.tol;
  cc.validate();
  json info;
  tdi::CpFit fit = estimate_or_load(s, "", a.rank, a.r_max, cc, &info);
  json j = tdi::to_json(fit);
  j["rank_source"] = info["rank_source"];
  tdi::write_json(j, a.output);
  if (!a.residuals.empty()) tdi::write_matrix_csv(tdi::residual_matrix(s, fit), a.residuals);
  if (!a.quiet)
    std::cout << "rank " << fit.rank << " | signals " << join(fit.signals) << " | "
              << (fit.converged ? "converged" : "not converged") << " after " << fit.iterations_used << " iterations (gap "
              << fit.final_gap << ")\n";
  return 0;
}

// ---- forecast ----

struct ForecastArgs {
  std::string input, dims, target, predictors, fit, rank = "auto", mode = "di", interval = "auto", lambda = "auto",
      threshold = "scad", threshold_lambda = "auto", nodewise_lambda = "auto", avar = "hetero", output;
  Index r_max = 0;
  Index horizon = 1;
  double level = 0.95;
  bool no_intercept = false;
  int max_iter = 100;
  double tol = 1e-5;
  bool quiet = false;
};

int run_forecast(const ForecastArgs& a) {
  tdi::interval_quantile(a.level);
  if (a.mode != "di" && a.mode != "msfasr") throw tdi::InvalidArgument("--mode must be di or msfasr");
  std::string interval = a.interval;
  if (interval == "auto") interval = a.mode == "di" ? "gamma2" : "pdlasso";
  if (interval != "gamma1" && interval != "gamma2" && interval != "pdlasso" && interval != "none")
    throw tdi::InvalidArgument("--interval must be gamma1, gamma2, pdlasso, none or auto");
  if (a.mode == "di" && interval == "pdlasso") throw tdi::InvalidArgument("--interval pdlasso requires --mode msfasr");
  if (a.mode == "msfasr" && (interval == "gamma1" || interval == "gamma2"))
    throw tdi::InvalidArgument("--mode msfasr supports --interval pdlasso or none");
  if (a.mode == "msfasr" && a.predictors.empty()) throw tdi::InvalidArgument("--mode msfasr needs --predictors");
  if (a.avar != "hetero" && a.avar != "homo") throw tdi::InvalidArgument("--avar must be hetero or homo");
  const tdi::ThresholdKind tkind = tdi::threshold_kind_from_string(a.threshold);
  if (a.horizon < 1) throw tdi::InvalidArgument("--horizon must be >= 1");

  tdi::TensorSeries s = load_series(a.input, a.dims);
  const Index T = s.length();
  tdi::TimedMatrix y = tdi::read_timed_csv(a.target);
  if (y.values.cols() != 1) throw tdi::DataError(a.target + ": target must have one value column");
  tdi::check_alignment("target " + a.target, y.timestamps, y.values.rows(), s.timestamps(), T);
  MatrixXd w_obs(T, 0);
  if (!a.predictors.empty()) {
    tdi::TimedMatrix w = tdi::read_timed_csv(a.predictors);
    tdi::check_alignment("predictors " + a.predictors, w.timestamps, w.values.rows(), s.timestamps(), T);
    w_obs = w.values;
  }
  const VectorXd yv = y.values.col(0);

  tdi::CcIsoConfig cc;
  cc.max_iterations = a.max_iter;
  cc.tolerance = a.tol;
  cc.validate();
  json info;
  tdi::CpFit cp = estimate_or_load(s, a.fit, a.rank, a.r_max, cc, &info);
  const Index d = s.slice_size();
  const std::optional<double> thr = parse_penalty(a.threshold_lambda, "--threshold-lambda");
  const tdi::ThresholdRule rule{tkind, thr ? *thr : tdi::default_threshold_lambda(d, T, cp.signals(cp.rank - 1)), 3.7};
  rule.validate();

  json out;
  out["schema_version"] = tdi::schema_version;
  out["kind"] = "forecast";
  out["mode"] = a.mode;
  out["interval_method"] = interval;
  out["horizon"] = a.horizon;
  out["level"] = a.level;
  out["rank"] = cp.rank;
  out["rank_source"] = info["rank_source"];
  out["signals"] = tdi::to_json(cp.signals);

  std::optional<tdi::PredictionInterval> pi;
  double point = 0.0;
  if (a.mode == "di") {
    MatrixXd w(T, w_obs.cols() + (a.no_intercept ? 0 : 1));
    if (!a.no_intercept) w.col(0).setOnes();
    w.rightCols(w_obs.cols()) = w_obs;
    tdi::DiffusionFit fit =
        tdi::fit_ols(yv, w, cp, a.horizon, a.avar == "homo" ? tdi::AvarMode::homo : tdi::AvarMode::hetero);
    const VectorXd w_T = w.row(T - 1).transpose();
    point = tdi::forecast(fit, w_T, cp.factors.row(T - 1).transpose());
    if (interval != "none") {
      const MatrixXd e = tdi::residual_matrix(s, cp);
      const MatrixXd gamma = interval == "gamma1" ? tdi::gamma1_diagonal(cp, e) : tdi::gamma2_thresholded(cp, e, rule);
      pi = tdi::prediction_interval(fit, cp, gamma, w_T, a.level);
      if (interval == "gamma2") out["threshold"] = {{"rule", tdi::to_string(rule.kind)}, {"lambda", rule.lambda}};
    }
    out["model"] = tdi::to_json(fit);
  } else {
    tdi::MsFasrOptions mo;
    mo.horizon = a.horizon;
    mo.intercept = !a.no_intercept;
    tdi::MsFasrDesign design = tdi::ms_fasr_design(yv, w_obs, cp.factors, mo);
    double lambda = 0.0;
    if (a.lambda == "bic") {
      tdi::LassoConfig lc;
      lc.penalty_weights = design.penalty_weights;
      lambda = tdi::select_lambda_bic(design.gram, lc).lambda;
      out["lambda_source"] = "bic";
    } else {
      const std::optional<double> l = parse_penalty(a.lambda, "--lambda");
      lambda = l ? *l : tdi::default_msfasr_lambda(cp);
      out["lambda_source"] = l ? "user" : "default";
    }
    out["lambda"] = std::isfinite(lambda) ? json(lambda) : json("inf");
    tdi::MsFasrFit fit = tdi::ms_fasr_finish(design, lambda);
    point = fit.forecast;
    if (interval == "pdlasso") {
      tdi::PdLassoOptions po;
      const std::optional<double> nl = parse_penalty(a.nodewise_lambda, "--nodewise-lambda");
      po.nodewise_lambda = nl ? *nl : tdi::default_nodewise_lambda(cp);
      const MatrixXd gamma = tdi::gamma2_thresholded(cp, tdi::residual_matrix(s, cp), rule);
      tdi::PdLassoResult res = tdi::pd_lasso_interval(fit, cp.signals, gamma, w_obs.row(T - 1).transpose(), a.level, po);
      pi = res.interval;
      out["threshold"] = {{"rule", tdi::to_string(rule.kind)}, {"lambda", rule.lambda}};
      out["pdlasso"] = tdi::to_json(res.state);
    }
    out["model"] = tdi::to_json(fit);
  }
  out["point"] = point;
  out["interval"] = pi ? tdi::to_json(*pi) : json(nullptr);
  tdi::write_json(out, a.output);
  if (!a.quiet) {
    std::cout.precision(8);
    std::cout << "forecast h=" << a.horizon << ": " << point;
    if (pi)
      std::cout << "  [" << pi->lower << ", " << pi->upper << "] at " << a.level << " (beta term " << pi->beta_term
                << ", factor term " << pi->factor_term << ")";
    std::cout << '\n';
  }
  return 0;
}

// ---- experiment ----

struct ExperimentArgs {
  std::string name, params, output;
  std::vector<std::string> param;
  long reps = 100;
  std::uint64_t seed = 20240601;
  int threads = 1;
  double max_failure_rate = 0.10;
  bool quiet = false;
};

int run_experiment_cmd(const ExperimentArgs& a) {
  json overrides = json::object();
  if (!a.params.empty()) {
    try {
      overrides = json::parse(a.params);
    } catch (const json::exception& e) {
      throw tdi::InvalidArgument(std::string("--params is not valid JSON: ") + e.what());
    }
    if (!overrides.is_object()) throw tdi::InvalidArgument("--params must be a JSON object");
  }
  for (const auto& kv : a.param) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw tdi::InvalidArgument("--param expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    try {
      overrides[key] = json::parse(val);
    } catch (const json::exception&) {
      overrides[key] = val;
    }
  }
  tdi::sim::ExperimentSpec spec = tdi::sim::make_experiment(a.name, overrides);
  tdi::sim::RunOptions ro;
  ro.replications = a.reps;
  ro.seed = a.seed;
  ro.threads = a.threads;
  ro.max_failure_rate = a.max_failure_rate;
  if (!a.quiet)
    ro.progress = [](std::size_t done, std::size_t total) {
      if (done == total || done % std::max<std::size_t>(1, total / 20) == 0)
        std::fprintf(stderr, "\r%zu/%zu replications", done, total);
      if (done == total) std::fprintf(stderr, "\n");
    };
  tdi::sim::ExperimentReport rep = tdi::sim::run_experiment(spec, ro);
  tdi::sim::write_report(rep, spec, a.output);
  if (!a.quiet) {
    std::fprintf(stderr, "wall time %.1f s\n", rep.wall_seconds);
    std::cout << a.name << ": " << spec.cells.size() << " cells x " << a.reps << " replications, " << rep.failures
              << " failed; reports in " << a.output << '\n';
  }
  return 0;
}

// ---- simulate ----

struct SimulateArgs {
  std::string dims = "10x10", target = "diffusion", factor_law = "ar", noise = "gaussian", output;
  Index rank = 3, T = 200, p = 200, p0 = 3;
  double alpha = 0.6, noise_tau = 0.5, noise_scale = 1.0, df = 5.0;
  std::vector<double> rho;
  std::uint64_t seed = 1;
};

int run_simulate(const SimulateArgs& a) {
  tdi::sim::DgpConfig g;
  g.dims = tdi::detail::parse_dims(a.dims);
  g.rank = a.rank;
  g.T = a.T;
  g.alpha = a.alpha;
  g.noise_tau = a.noise_tau;
  g.noise_scale = a.noise_scale;
  g.df = a.df;
  g.p = a.p;
  g.p0 = a.p0;
  if (!a.rho.empty()) {
    g.rho = a.rho;
  } else {
    g.rho.clear();
    for (Index i = 0; i < a.rank; ++i) g.rho.push_back(std::max(0.0, 0.6 - 0.1 * static_cast<double>(i)));
  }
  if (a.target == "diffusion")
    g.target = tdi::sim::TargetLaw::diffusion;
  else if (a.target == "high_dim")
    g.target = tdi::sim::TargetLaw::high_dim;
  else if (a.target == "none")
    g.target = tdi::sim::TargetLaw::none;
  else
    throw tdi::InvalidArgument("--target must be diffusion, high_dim or none");
  if (a.factor_law == "ar")
    g.factor_law = tdi::sim::FactorLaw::independent_ar;
  else if (a.factor_law == "iid")
    g.factor_law = tdi::sim::FactorLaw::iid_normal;
  else
    throw tdi::InvalidArgument("--factor-law must be ar or iid");
  if (a.noise == "gaussian")
    g.noise = tdi::sim::NoiseLaw::gaussian;
  else if (a.noise == "student_t")
    g.noise = tdi::sim::NoiseLaw::student_t;
  else
    throw tdi::InvalidArgument("--noise must be gaussian or student_t");
  tdi::sim::DgpSample smp = tdi::sim::generate(g, a.seed);
  std::error_code ec;
  fs::create_directories(a.output, ec);
  if (ec) throw tdi::DataError("cannot create " + a.output + ": " + ec.message());
  const fs::path dir(a.output);
  tdi::write_series_csv(smp.series, (dir / "series.csv").string());
  const auto& tr = smp.truth;
  if (g.target != tdi::sim::TargetLaw::none) tdi::write_matrix_csv(tr.y, (dir / "target.csv").string(), {"y"});
  if (g.target == tdi::sim::TargetLaw::high_dim) tdi::write_matrix_csv(tr.w, (dir / "predictors.csv").string());
  json j;
  j["schema_version"] = tdi::schema_version;
  j["kind"] = "simulation_truth";
  j["dims"] = g.dims;
  j["rank"] = g.rank;
  j["T"] = g.T;
  j["seed"] = a.seed;
  j["signals"] = tdi::to_json(tr.signals);
  VectorXd estimand = tr.signals.cwiseProduct((tr.factors.colwise().squaredNorm().transpose() / static_cast<double>(g.T)).cwiseSqrt());
  j["signal_times_factor_rms"] = tdi::to_json(estimand);
  json loads = json::array();
  for (const auto& l : tr.loadings) loads.push_back(tdi::to_json(l));
  j["loadings"] = loads;
  j["factors"] = tdi::to_json(tr.factors);
  if (g.target != tdi::sim::TargetLaw::none) {
    j["beta0"] = tdi::to_json(tr.beta0);
    j["beta1"] = tdi::to_json(tr.beta1);
    j["conditional_mean"] = tr.conditional_mean;
  }
  tdi::write_json(j, (dir / "truth.json").string());
  std::cout << "wrote " << g.T << " periods of " << tdi::dims_string(g.dims) << " tensors to " << a.output << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tdi: CP tensor factor estimation and diffusion-index forecasting", "tdi"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config;

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Fit the CP factor model by CC-ISO and write the fit as JSON");
  est->add_option("--config", config, "JSON file of flag values (flags on the command line take precedence)");
  est->add_option("--input", ea.input, "Series CSV (one row per period) or a directory of matrix slices")->required();
  est->add_option("--dims", ea.dims, "Mode sizes, e.g. 20x20 (default: read from the file's '# dims:' line)");
  est->add_option("--rank", ea.rank, "Number of factors, or 'auto' for the eigenvalue-ratio estimate")->capture_default_str();
  est->add_option("--r-max", ea.r_max, "Largest rank considered by --rank auto (default min(8, d_min - 1))");
  est->add_option("--max-iter", ea.max_iter, "CC-ISO iteration cap")->capture_default_str();
  est->add_option("--tol", ea.tol, "CC-ISO stopping tolerance")->capture_default_str();
  est->add_option("--output", ea.output, "Fit JSON path")->required();
  est->add_option("--residuals", ea.residuals, "Optional CSV of residuals (T rows, d columns)");
  est->add_flag("--quiet", ea.quiet, "Suppress the summary line");

  ForecastArgs fa;
  auto* fc = app.add_subcommand("forecast", "Point forecast and prediction interval for y_{T+h}");
  fc->add_option("--config", config, "JSON file of flag values (flags on the command line take precedence)");
  fc->add_option("--input", fa.input, "Series CSV or directory of matrix slices")->required();
  fc->add_option("--dims", fa.dims, "Mode sizes, e.g. 20x20");
  fc->add_option("--target", fa.target, "Target CSV, one value per period (optional leading t column)")->required();
  fc->add_option("--predictors", fa.predictors, "Observed predictors CSV, one row per period");
  fc->add_option("--fit", fa.fit, "Reuse a fit JSON written by 'estimate' instead of refitting");
  fc->add_option("--rank", fa.rank, "Number of factors, or 'auto'")->capture_default_str();
  fc->add_option("--r-max", fa.r_max, "Largest rank considered by --rank auto");
  fc->add_option("--mode", fa.mode, "di (OLS on factors and predictors) or msfasr (sparse predictors)")->capture_default_str();
  fc->add_option("--interval", fa.interval, "gamma1, gamma2, pdlasso, none or auto")->capture_default_str();
  fc->add_option("--level", fa.level, "Interval level in (0,1)")->capture_default_str();
  fc->add_option("--horizon", fa.horizon, "Forecast horizon h >= 1")->capture_default_str();
  fc->add_option("--lambda", fa.lambda, "msfasr penalty: auto, bic, inf or a number")->capture_default_str();
  fc->add_option("--threshold", fa.threshold, "Covariance threshold rule: scad, hard or soft")->capture_default_str();
  fc->add_option("--threshold-lambda", fa.threshold_lambda, "Threshold level: auto or a number")->capture_default_str();
  fc->add_option("--nodewise-lambda", fa.nodewise_lambda, "Nodewise LASSO penalty for pdlasso: auto or a number")
      ->capture_default_str();
  fc->add_option("--avar", fa.avar, "OLS covariance: hetero or homo")->capture_default_str();
  fc->add_flag("--no-intercept", fa.no_intercept, "Omit the constant");
  fc->add_option("--max-iter", fa.max_iter, "CC-ISO iteration cap")->capture_default_str();
  fc->add_option("--tol", fa.tol, "CC-ISO stopping tolerance")->capture_default_str();
  fc->add_option("--output", fa.output, "Forecast JSON path")->required();
  fc->add_flag("--quiet", fa.quiet, "Suppress the summary line");

  ExperimentArgs xa;
  auto* ex = app.add_subcommand("experiment", "Run a named Monte Carlo experiment and write metrics.csv, summary.json, plot_<name>.csv");
  ex->add_option("name", xa.name, "factor_consistency, factor_normality, coverage, msfasr_rates, hac_demo, iso_vs_pca, pdlasso, robustness")
      ->required();
  ex->add_option("--config", config, "JSON file of flag values; its 'params' object holds experiment settings");
  ex->add_option("--params", xa.params, "JSON object of experiment settings");
  ex->add_option("--param", xa.param, "One experiment setting as key=value (JSON value); repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ex->add_option("--reps", xa.reps, "Replications per cell")->capture_default_str();
  ex->add_option("--seed", xa.seed, "Master seed")->capture_default_str();
  ex->add_option("--threads", xa.threads, "Worker threads")->capture_default_str();
  ex->add_option("--max-failure-rate", xa.max_failure_rate, "Fail when more replications than this fraction fail")
      ->capture_default_str();
  ex->add_option("--output", xa.output, "Report directory")->required();
  ex->add_flag("--quiet", xa.quiet, "No progress output");

  SimulateArgs sa;
  auto* sm = app.add_subcommand("simulate", "Draw one synthetic panel with its target and write CSVs plus truth.json");
  sm->add_option("--config", config, "JSON file of flag values (flags on the command line take precedence)");
  sm->add_option("--dims", sa.dims, "Mode sizes")->capture_default_str();
  sm->add_option("--rank", sa.rank, "Number of factors")->capture_default_str();
  sm->add_option("--T", sa.T, "Periods")->capture_default_str();
  sm->add_option("--alpha", sa.alpha, "Signal exponent: s_i = (r - i + 1) sqrt(d^alpha)")->capture_default_str();
  sm->add_option("--rho", sa.rho, "AR(1) coefficient per factor (default 0.6, 0.5, 0.4, ...)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sm->add_option("--factor-law", sa.factor_law, "ar or iid")->capture_default_str();
  sm->add_option("--noise", sa.noise, "gaussian or student_t")->capture_default_str();
  sm->add_option("--df", sa.df, "Student-t degrees of freedom")->capture_default_str();
  sm->add_option("--noise-tau", sa.noise_tau, "Toeplitz parameter of each mode's noise covariance")->capture_default_str();
  sm->add_option("--noise-scale", sa.noise_scale, "Noise multiplier (0: noiseless)")->capture_default_str();
  sm->add_option("--target", sa.target, "diffusion, high_dim or none")->capture_default_str();
  sm->add_option("--p", sa.p, "Observed predictors for --target high_dim")->capture_default_str();
  sm->add_option("--p0", sa.p0, "Non-zero sparse coefficients for --target high_dim")->capture_default_str();
  sm->add_option("--seed", sa.seed, "Seed")->capture_default_str();
  sm->add_option("--output", sa.output, "Output directory")->required();

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const tdi::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  }

  try {
    if (*est) return run_estimate(ea);
    if (*fc) return run_forecast(fa);
    if (*ex) return run_experiment_cmd(xa);
    if (*sm) return run_simulate(sa);
  } catch (const tdi::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
