// SPDX-License-Identifier: MIT
// End-to-end checks of the tdi executable against the bundled fixtures.
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "tdi/io.hpp"
#include "tdi/regression.hpp"
#include "tdi/serialize.hpp"

using namespace tdi;
namespace fs = std::filesystem;

namespace {

const std::string kCli = TDI_CLI_PATH;
const std::string kFix = TDI_FIXTURE_DIR;

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tdi_cli_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const std::string o = (dir_ / "stdout.txt").string(), e = (dir_ / "stderr.txt").string();
    const int status = std::system((kCli + " " + args + " >" + o + " 2>" + e).c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpListsEveryFlag) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected{
      {"estimate", {"--input", "--dims", "--rank", "--r-max", "--max-iter", "--tol", "--output", "--residuals", "--config"}},
      {"forecast",
       {"--input", "--target", "--predictors", "--fit", "--rank", "--mode", "--interval", "--level", "--horizon", "--lambda",
        "--threshold", "--threshold-lambda", "--nodewise-lambda", "--avar", "--no-intercept", "--output"}},
      {"experiment", {"--params", "--param", "--reps", "--seed", "--threads", "--max-failure-rate", "--output", "--config"}},
      {"simulate", {"--dims", "--rank", "--T", "--alpha", "--rho", "--noise-scale", "--target", "--p", "--p0", "--seed"}},
  };
  Outcome top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const auto& [cmd, flags] : expected) {
    EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
    Outcome r = run(cmd + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
  }
}

TEST_F(CliTest, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("estimate --output x.json").code, 2);
  EXPECT_EQ(run("estimate --input " + kFix + "/toy/series.csv --rank two --output " + path("f.json")).code, 2);
}

TEST_F(CliTest, NoiselessRankOneRecoversTheSignal) {
  Outcome r = run("estimate --input " + kFix + "/rank1/series.csv --rank 1 --tol 1e-12 --max-iter 200 --quiet --output " +
              path("fit.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  json fit = read_json(path("fit.json"));
  json truth = read_json(kFix + "/rank1/truth.json");
  EXPECT_EQ(fit.at("dims"), truth.at("dims"));
  EXPECT_NEAR(fit.at("signals")[0].get<double>(), truth.at("signal_times_factor_rms")[0].get<double>(), 1e-6);
}

TEST_F(CliTest, MalformedCsvIsADataError) {
  Outcome r = run("estimate --input " + kFix + "/malformed.csv --rank 1 --output " + path("f.json"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("malformed.csv:3"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("f.json")));
  EXPECT_EQ(run("estimate --input " + path("missing.csv") + " --rank 1 --output " + path("f.json")).code, 3);
}

TEST_F(CliTest, ForecastPointMatchesTheLibrary) {
  const std::string series = kFix + "/toy/series.csv", target = kFix + "/toy/target.csv";
  Outcome r = run("forecast --input " + series + " --target " + target + " --rank 2 --quiet --output " + path("fc.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  json fc = read_json(path("fc.json"));

  TensorSeries s = read_series_csv(series);
  VectorXd y = read_vector_csv(target);
  CpFit cp = cc_iso(s, 2);
  const Index T = s.length();
  DiffusionFit fit = fit_ols(y, MatrixXd::Ones(T, 1), cp, 1);
  const double point = forecast(fit, VectorXd::Ones(1), cp.factors.row(T - 1).transpose());
  EXPECT_NEAR(fc.at("point").get<double>(), point, 1e-6);
  const json& pi = fc.at("interval");
  EXPECT_LT(pi.at("lower").get<double>(), point);
  EXPECT_GT(pi.at("upper").get<double>(), point);
  EXPECT_EQ(fc.at("interval_method"), "gamma2");
}

TEST_F(CliTest, LevelZeroIsRejected) {
  Outcome r = run("forecast --input " + kFix + "/toy/series.csv --target " + kFix + "/toy/target.csv --rank 2 --level 0 --output " +
              path("fc.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("level"), std::string::npos) << r.err;
}

TEST_F(CliTest, InfinitePenaltyMatchesFactorOnlyForecast) {
  const std::string base = "forecast --input " + kFix + "/hd/series.csv --target " + kFix + "/hd/target.csv --rank 2 --quiet ";
  Outcome ms = run(base + "--predictors " + kFix + "/hd/predictors.csv --mode msfasr --lambda inf --interval none --output " +
               path("ms.json"));
  ASSERT_EQ(ms.code, 0) << ms.err;
  Outcome di = run(base + "--mode di --interval none --output " + path("di.json"));
  ASSERT_EQ(di.code, 0) << di.err;
  const double a = read_json(path("ms.json")).at("point").get<double>();
  const double b = read_json(path("di.json")).at("point").get<double>();
  EXPECT_NEAR(a, b, 1e-10);
  EXPECT_EQ(read_json(path("ms.json")).at("lambda"), "inf");

  Outcome pd = run(base + "--predictors " + kFix + "/hd/predictors.csv --mode msfasr --output " + path("pd.json"));
  ASSERT_EQ(pd.code, 0) << pd.err;
  EXPECT_EQ(read_json(path("pd.json")).at("interval_method"), "pdlasso");
}

TEST_F(CliTest, MisalignedTargetNamesTheOffset) {
  TensorSeries s = read_series_csv(kFix + "/toy/series.csv");
  VectorXd y = read_vector_csv(kFix + "/toy/target.csv");
  {
    std::ofstream out(path("series.csv"));
    out.precision(17);
    out << "# dims: 8x8\nt";
    for (Index j = 0; j < s.slice_size(); ++j) out << ",x" << j;
    out << '\n';
    for (Index t = 0; t < s.length(); ++t) {
      out << 100 + t;
      for (Index j = 0; j < s.slice_size(); ++j) out << ',' << s.matrix()(j, t);
      out << '\n';
    }
    std::ofstream tgt(path("target.csv"));
    tgt.precision(17);
    tgt << "t,y\n";
    for (Index t = 0; t < y.size(); ++t) tgt << 103 + t << ',' << y(t) << '\n';
  }
  Outcome r = run("forecast --input " + path("series.csv") + " --target " + path("target.csv") + " --rank 2 --output " +
              path("fc.json"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("offset 3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("t=103"), std::string::npos) << r.err;

  std::ofstream(path("short.csv")) << "y\n1\n2\n3\n";
  Outcome s2 = run("forecast --input " + kFix + "/toy/series.csv --target " + path("short.csv") + " --rank 2 --output " +
               path("fc.json"));
  EXPECT_EQ(s2.code, 3);
  EXPECT_NE(s2.err.find("offset -77"), std::string::npos) << s2.err;
}

TEST_F(CliTest, ExperimentWritesFilesAndRepeatsBitwise) {
  const std::string args = "experiment coverage --reps 2 --seed 5 --quiet --param 'dk=[8]' --param 'alpha=[0.6]' --param T=60 ";
  Outcome a = run(args + "--output " + path("a"));
  ASSERT_EQ(a.code, 0) << a.err;
  Outcome b = run(args + "--output " + path("b"));
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"metrics.csv", "summary.json", "plot_coverage.csv"}) {
    ASSERT_TRUE(fs::exists(dir_ / "a" / f)) << f;
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  }
  json summary = read_json(path("a/summary.json"));
  EXPECT_EQ(summary.at("replications"), 2);
  EXPECT_EQ(summary.at("config").at("dk"), json({8}));
  Outcome again = run(args + "--output " + path("a"));
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "b" / "metrics.csv"));
}

TEST_F(CliTest, ExperimentConfigFileAndFlagPrecedence) {
  std::ofstream(path("cfg.json")) << R"({"reps": 3, "seed": 9, "params": {"dk": [8], "alpha": [0.6], "T": 60}})";
  Outcome r = run("experiment coverage --config " + path("cfg.json") + " --reps 1 --quiet --output " + path("o"));
  ASSERT_EQ(r.code, 0) << r.err;
  json summary = read_json(path("o/summary.json"));
  EXPECT_EQ(summary.at("replications"), 1);
  EXPECT_EQ(summary.at("seed"), 9);
}

TEST_F(CliTest, UnknownExperimentListsNames) {
  Outcome r = run("experiment nonsense --output " + path("x"));
  EXPECT_EQ(r.code, 2);
  for (const char* n : {"factor_consistency", "factor_normality", "coverage", "msfasr_rates", "hac_demo", "iso_vs_pca",
                        "pdlasso", "robustness"})
    EXPECT_NE(r.err.find(n), std::string::npos) << n << " missing from: " << r.err;
  Outcome k = run("experiment coverage --param bogus=1 --output " + path("x"));
  EXPECT_EQ(k.code, 2);
  EXPECT_NE(k.err.find("bogus"), std::string::npos) << k.err;
}

TEST_F(CliTest, EstimateAndSimulateAreIdempotent) {
  const std::string est = "estimate --input " + kFix + "/toy/series.csv --quiet --residuals " + path("res.csv") + " --output ";
  ASSERT_EQ(run(est + path("f1.json")).code, 0);
  const std::string res1 = slurp(dir_ / "res.csv");
  ASSERT_EQ(run(est + path("f2.json")).code, 0);
  EXPECT_EQ(slurp(dir_ / "f1.json"), slurp(dir_ / "f2.json"));
  EXPECT_EQ(slurp(dir_ / "res.csv"), res1);
  EXPECT_EQ(read_json(path("f1.json")).at("rank_source"), "eigenvalue_ratio");

  const std::string sim = "simulate --dims 5x4 --rank 2 --T 30 --seed 4 --output ";
  ASSERT_EQ(run(sim + path("s1")).code, 0);
  ASSERT_EQ(run(sim + path("s2")).code, 0);
  for (const char* f : {"series.csv", "target.csv", "truth.json"})
    EXPECT_EQ(slurp(dir_ / "s1" / f), slurp(dir_ / "s2" / f)) << f;

  // Reusing the fit file gives the same forecast as refitting.
  const std::string fc = "forecast --input " + kFix + "/toy/series.csv --target " + kFix + "/toy/target.csv --quiet ";
  ASSERT_EQ(run(fc + "--output " + path("a.json")).code, 0);
  ASSERT_EQ(run(fc + "--fit " + path("f1.json") + " --output " + path("b.json")).code, 0);
  EXPECT_EQ(read_json(path("a.json")).at("point"), read_json(path("b.json")).at("point"));
}
