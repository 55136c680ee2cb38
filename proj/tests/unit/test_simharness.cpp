// SPDX-License-Identifier: MIT
#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "tdi/sim/experiments.hpp"
#include "test_util.hpp"

using namespace tdi;
using namespace tdi::sim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentSpec toy_spec() {
  ExperimentSpec spec;
  spec.name = "toy";
  spec.config = json{{"k", 1}};
  spec.metrics = {"u", "v"};
  for (double scale : {0.6, 2.0}) {
    spec.cells.push_back({json{{"scale", scale}}, [scale](std::uint64_t seed) {
                            Rng rng(seed);
                            return std::vector<double>{scale * rng.normal(), rng.uniform(0.0, 1.0)};
                          }});
  }
  spec.plot_columns = {"label:scale", "mean:u", "std:v"};
  return spec;
}

}  // namespace

TEST(Dgp, ValidationRejectsBadFields) {
  auto bad = [](auto mutate) {
    DgpConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](DgpConfig& c) { c.rho = {1.0, 0.5, 0.4}; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](DgpConfig& c) { c.rho = {0.5}; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](DgpConfig& c) { c.noise_tau = 1.0; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](DgpConfig& c) {
                 c.noise = NoiseLaw::student_t;
                 c.df = 2.0;
               }).validate(),
               InvalidArgument);
  EXPECT_THROW(bad([](DgpConfig& c) { c.dims = {2, 40}; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](DgpConfig& c) { c.T = 1; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](DgpConfig& c) { c.horizon = 0; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](DgpConfig& c) { c.beta1 = {1.0}; }).validate(), InvalidArgument);
  EXPECT_THROW(generate(bad([](DgpConfig& c) { c.noise_scale = -1.0; }), 1), InvalidArgument);
}

TEST(Dgp, SameSeedSameSample) {
  DgpConfig c;
  c.dims = {6, 7};
  c.T = 40;
  DgpSample a = generate(c, 99), b = generate(c, 99), other = generate(c, 100);
  EXPECT_EQ(a.series.matrix(), b.series.matrix());
  EXPECT_EQ(a.truth.y, b.truth.y);
  EXPECT_NE(a.series.matrix(), other.series.matrix());
}

TEST(Dgp, LoadingsHaveUnitNormAndSignalsFollowTheLaw) {
  DgpConfig c;
  c.dims = {9, 7, 5};
  c.T = 20;
  DgpSample s = generate(c, 3);
  for (const MatrixXd& a : s.truth.loadings)
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(a.col(i).norm(), 1.0, 1e-12);
  const double root = std::sqrt(std::pow(315.0, 0.6));
  EXPECT_NEAR(s.truth.signals(0), 3.0 * root, 1e-10);
  EXPECT_NEAR(s.truth.signals(2), root, 1e-10);
}

TEST(Dgp, WhiteFactorsHaveNoLagOneCorrelationAndUnitVariance) {
  DgpConfig c;
  c.dims = {3, 3};
  c.T = 20000;
  c.rho = {0.0, 0.0, 0.9};
  DgpSample s = generate(c, 4);
  const MatrixXd& f = s.truth.factors;
  const double T = static_cast<double>(c.T);
  for (Index i = 0; i < 2; ++i) {
    const VectorXd x = f.col(i).array() - f.col(i).mean();
    const double ac = x.head(c.T - 1).dot(x.tail(c.T - 1)) / x.squaredNorm();
    EXPECT_LE(std::abs(ac), 3.0 / std::sqrt(T)) << "factor " << i;
  }
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(f.col(i).squaredNorm() / T, 1.0, i == 2 ? 0.1 : 0.05);
}

TEST(Dgp, NoiseCovarianceIsKroneckerOfModeToeplitz) {
  DgpConfig c;
  c.dims = {6, 6};
  c.T = 40000;
  c.target = TargetLaw::none;
  c.keep_noise = true;
  DgpSample s = generate(c, 5);
  const MatrixXd& e = s.truth.noise;
  const MatrixXd sample = e * e.transpose() / static_cast<double>(c.T);
  MatrixXd pop(36, 36);
  const MatrixXd& s1 = s.truth.mode_covariances[0];
  const MatrixXd& s2 = s.truth.mode_covariances[1];
  for (Index j2 = 0; j2 < 6; ++j2)
    for (Index j1 = 0; j1 < 6; ++j1)
      for (Index i2 = 0; i2 < 6; ++i2)
        for (Index i1 = 0; i1 < 6; ++i1) pop(i1 + 6 * i2, j1 + 6 * j2) = s1(i1, j1) * s2(i2, j2);
  EXPECT_LE((sample - pop).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(static_cast<double>(c.T)));
}

TEST(Dgp, NoiselessPanelIsTheSignalAndTargetsAreConsistent) {
  DgpConfig c;
  c.dims = {5, 4};
  c.T = 30;
  c.noise_scale = 0.0;
  DgpSample s = generate(c, 6);
  const MatrixXd signal = khatri_rao_chain(s.truth.loadings) * s.truth.signals.asDiagonal() * s.truth.factors.transpose();
  EXPECT_LE((s.series.matrix() - signal).cwiseAbs().maxCoeff(), 1e-12);
  // Diffusion target: y_{t+1} = 0.5 + 0.5 * sum f_t + eps.
  for (Index t = 0; t + 1 < c.T; ++t)
    EXPECT_NEAR(s.truth.y(t + 1) - s.truth.eps(t + 1), 0.5 + 0.5 * s.truth.factors.row(t).sum(), 1e-12);
  EXPECT_NEAR(s.truth.conditional_mean, 0.5 + 0.5 * s.truth.factors.row(c.T - 1).sum(), 1e-12);
  for (Index t = 0; t < c.T; ++t) EXPECT_LE(std::abs(s.truth.eps(t)) / std::sqrt(1.5), 10.0);
}

TEST(Dgp, AlignToTruthUndoesPermutationAndSign) {
  DgpConfig c;
  c.dims = {12, 12};
  c.T = 200;
  c.noise_scale = 0.0;
  DgpSample s = generate(c, 7);
  CpFit fit = cc_iso(s.series, 3);
  CpFit shuffled = fit;
  shuffled.loadings[0].col(0).swap(shuffled.loadings[0].col(1));
  shuffled.loadings[1].col(0).swap(shuffled.loadings[1].col(1));
  shuffled.factors.col(0).swap(shuffled.factors.col(1));
  std::swap(shuffled.signals(0), shuffled.signals(1));
  shuffled.loadings[1].col(2) *= -1.0;
  shuffled.factors.col(2) *= -1.0;
  CpFit back = align_to_truth(shuffled, s.truth);
  for (Index i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      EXPECT_GE(back.loadings[k].col(i).dot(s.truth.loadings[k].col(i)), 1.0 - 1e-8) << "component " << i;
  EXPECT_LE(scaled_factor_error(back, s.truth, c.T - 1).norm(), 1e-6);
}

TEST(Harness, SummaryStatistics) {
  std::vector<double> v{3.0, tdi::sim::nan, 1.0, 2.0, 4.0};
  EXPECT_DOUBLE_EQ(mean_of(finite_values(v)), 2.5);
  json s = summarize_metric(v);
  EXPECT_EQ(s.at("n").get<int>(), 4);
  EXPECT_DOUBLE_EQ(s.at("mean").get<double>(), 2.5);
  EXPECT_NEAR(s.at("std").get<double>(), std::sqrt(5.0 / 3.0), 1e-14);
  EXPECT_TRUE(summarize_metric({tdi::sim::nan}).at("mean").is_null());
  LineFit f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.r2, 1.0, 1e-14);
  EXPECT_TRUE(std::isnan(fit_line({1}, {1}).slope));
}

TEST(Harness, SeedsAreMasterXorIndex) {
  EXPECT_EQ(replication_seed(0b1100, 0b0101), 0b1001u);
  ExperimentReport rep = run_experiment(toy_spec(), RunOptions{3, 40, 1, 0.1, {}});
  ASSERT_EQ(rep.rows.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(rep.rows[i].seed, 40u ^ i);
    EXPECT_EQ(rep.rows[i].cell, i / 3);
  }
}

TEST(Harness, ThreadCountAndRepeatsDoNotChangeResults) {
  RunOptions one{25, 7, 1, 0.1, {}};
  RunOptions many = one;
  many.threads = 3;
  ExperimentReport a = run_experiment(toy_spec(), one);
  ExperimentReport b = run_experiment(toy_spec(), one);
  ExperimentReport c = run_experiment(toy_spec(), many);
  EXPECT_EQ(a.summary.dump(), b.summary.dump());
  EXPECT_EQ(a.summary.dump(), c.summary.dump());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].values, c.rows[i].values);
}

TEST(Harness, FailedReplicationsAreRecordedThenEscalate) {
  ExperimentSpec spec;
  spec.name = "flaky";
  spec.metrics = {"x"};
  int period = 20;
  spec.cells.push_back({json{{"c", 0}}, [&period](std::uint64_t seed) {
                          if (seed % static_cast<std::uint64_t>(period) == 0) throw NumericalError("boom");
                          return std::vector<double>{1.0};
                        }});
  ExperimentReport rep = run_experiment(spec, RunOptions{40, 0, 1, 0.1, {}});
  EXPECT_EQ(rep.failures, 2);
  EXPECT_FALSE(rep.rows[20].ok);
  EXPECT_EQ(rep.rows[20].error, "boom");
  EXPECT_TRUE(std::isnan(rep.rows[20].values[0]));
  EXPECT_EQ(rep.summary["cells"][0]["metrics"]["x"]["n"].get<int>(), 38);
  period = 5;
  EXPECT_THROW(run_experiment(spec, RunOptions{40, 0, 1, 0.1, {}}), NumericalError);
  EXPECT_THROW(run_experiment(spec, RunOptions{0, 0, 1, 0.1, {}}), InvalidArgument);
}

TEST(Harness, WriteReportProducesThreeFiles) {
  const fs::path dir = fs::temp_directory_path() / ("tdi_report_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  ExperimentSpec spec = toy_spec();
  ExperimentReport rep = run_experiment(spec, RunOptions{4, 1, 1, 0.1, {}});
  write_report(rep, spec, dir.string());
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "cell,scale,rep,seed,status,u,v,error");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 9);
  EXPECT_NE(metrics.find("\n0,0.6,0,"), std::string::npos);
  const std::string plot = slurp(dir / "plot_toy.csv");
  EXPECT_EQ(plot.substr(0, plot.find('\n')), "scale,mean_u,std_v");
  json summary = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary.at("experiment"), "toy");
  EXPECT_EQ(summary.at("cells").size(), 2u);
  write_report(rep, spec, dir.string());
  EXPECT_EQ(slurp(dir / "metrics.csv"), metrics);
  fs::remove_all(dir);
}

TEST(Experiments, UnknownNameListsValidNames) {
  try {
    make_experiment("nope");
    FAIL();
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    for (const auto& n : experiment_names()) EXPECT_NE(msg.find(n), std::string::npos) << n;
  }
}

TEST(Experiments, UnknownAndMistypedKeysAreRejected) {
  try {
    make_experiment("coverage", json{{"dk", {8}}, {"bogus", 1}});
    FAIL();
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bogus"), std::string::npos);
    EXPECT_NE(msg.find("valid keys"), std::string::npos);
  }
  EXPECT_THROW(make_experiment("coverage", json{{"dk", "eight"}}), InvalidArgument);
  EXPECT_THROW(make_experiment("coverage", json::array()), InvalidArgument);
  ExperimentSpec s = make_experiment("coverage", json{{"dk", {8}}, {"alpha", {0.6}}, {"T", 60}});
  EXPECT_EQ(s.config.at("dk"), json({8}));
  EXPECT_EQ(s.config.at("level"), 0.95);
  EXPECT_EQ(s.cells.size(), 1u);
}

TEST(Experiments, EveryDriverRunsOneTinyReplication) {
  const std::vector<std::pair<std::string, json>> tiny{
      {"factor_consistency", {{"dk", {8}}, {"alpha", {0.6}}, {"T", {60}}}},
      {"factor_normality", {{"dk", {8}}, {"T", 60}}},
      {"coverage", {{"dk", {8}}, {"alpha", {0.6}}, {"T", 60}}},
      {"msfasr_rates", {{"dk", 8}, {"alpha", {0.6}}, {"p", 20}, {"T", {60}}}},
      {"hac_demo", {{"dk", {8}}, {"setting", {2}}}},
      {"iso_vs_pca", {{"dk", {8}}, {"alpha", {0.6}}, {"T", 60}}},
      {"pdlasso", {{"dk", {8}}, {"alpha", {1.0}}, {"T", 60}, {"p", 20}}},
      {"robustness",
       {{"dk", 8},
        {"T", 60},
        {"persistence", {0.7}},
        {"kappa", {0.6}},
        {"df", {5.0}},
        {"rate_dk", {8, 10}},
        {"rate_T", 60},
        {"lambda_zero_T", {60}},
        {"msfasr_T", 60},
        {"p", 20}}},
  };
  ASSERT_EQ(tiny.size(), experiment_names().size());
  for (const auto& [name, cfg] : tiny) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentSpec spec = make_experiment(name, cfg);
    ExperimentReport a = run_experiment(spec, RunOptions{1, 11, 1, 0.5, {}});
    ExperimentReport b = run_experiment(spec, RunOptions{1, 11, 1, 0.5, {}});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_EQ(a.failures, 0) << name << ": " << (a.rows.empty() ? "" : a.rows.front().error);
    EXPECT_EQ(a.summary.dump(), b.summary.dump()) << name;
    EXPECT_EQ(a.rows.size(), spec.cells.size()) << name;
    EXPECT_LT(secs, 10.0) << name;
  }
}
