// SPDX-License-Identifier: MIT
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unsupported/Eigen/KroneckerProduct>

#include "tdi/covariance.hpp"
#include "tdi/sim/dgp.hpp"
#include "test_util.hpp"

using namespace tdi;
using tdi_test::gaussian;

namespace {

const ThresholdKind kAllKinds[] = {ThresholdKind::hard, ThresholdKind::soft, ThresholdKind::scad};

double spectral_norm(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// T x d draws with covariance sigma.
MatrixXd correlated_draws(std::mt19937_64& g, const MatrixXd& sigma, Index T) {
  return gaussian(g, T, sigma.rows()) * sym_sqrt(sigma);
}

}  // namespace

TEST(Threshold, HandValues) {
  EXPECT_NEAR(apply_threshold(1.2, {ThresholdKind::soft, 0.5}), 0.7, 1e-15);
  EXPECT_NEAR(apply_threshold(-1.2, {ThresholdKind::soft, 0.5}), -0.7, 1e-15);
  EXPECT_EQ(apply_threshold(5.0, {ThresholdKind::scad, 1.0, 3.7}), 5.0);
  // (2.7 * 3 - 3.7) / 1.7 = 4.4 / 1.7
  EXPECT_NEAR(apply_threshold(3.0, {ThresholdKind::scad, 1.0, 3.7}), 2.5882353, 1e-6);
  EXPECT_NEAR(apply_threshold(-3.0, {ThresholdKind::scad, 1.0, 3.7}), -2.5882353, 1e-6);
  EXPECT_EQ(apply_threshold(0.4, {ThresholdKind::hard, 0.5}), 0.0);
  EXPECT_EQ(apply_threshold(0.6, {ThresholdKind::hard, 0.5}), 0.6);
}

TEST(Threshold, ConditionsHoldOnRandomInputs) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> lam(0.0, 3.0);
  std::normal_distribution<double> z(0.0, 3.0);
  for (ThresholdKind kind : kAllKinds) {
    for (int i = 0; i < 100000; ++i) {
      const ThresholdRule rule{kind, lam(g), 3.7};
      const double x = z(g);
      const double t = apply_threshold(x, rule);
      ASSERT_LE(std::abs(t), std::abs(x)) << to_string(kind) << " z=" << x << " lambda=" << rule.lambda;
      if (std::abs(x) <= rule.lambda) { ASSERT_EQ(t, 0.0) << to_string(kind); }
      ASSERT_LE(std::abs(t - x), rule.lambda + 4e-16 * std::abs(x)) << to_string(kind);
    }
  }
}

TEST(Threshold, ScadIsContinuousAtBranchPoints) {
  for (double lam : {1e-3, 0.3, 1.0, 7.5})
    for (double a : {2.1, 3.7, 10.0}) {
      const ThresholdRule rule{ThresholdKind::scad, lam, a};
      for (double knot : {lam, 2 * lam, a * lam})
        for (double s : {1.0, -1.0}) {
          const double left = apply_threshold(s * std::nextafter(knot, 0.0), rule);
          const double at = apply_threshold(s * knot, rule);
          const double right = apply_threshold(s * std::nextafter(knot, 1e300), rule);
          EXPECT_LE(std::abs(left - at), 1e-10);
          EXPECT_LE(std::abs(right - at), 1e-10);
        }
    }
}

TEST(Threshold, RuleValidation) {
  EXPECT_THROW((ThresholdRule{ThresholdKind::soft, -0.1}.validate()), InvalidArgument);
  EXPECT_THROW((ThresholdRule{ThresholdKind::scad, 1.0, 2.0}.validate()), InvalidArgument);
  EXPECT_NO_THROW((ThresholdRule{ThresholdKind::hard, 0.0, 1.0}.validate()));
  EXPECT_THROW(threshold_kind_from_string("lasso"), InvalidArgument);
  EXPECT_EQ(threshold_kind_from_string("scad"), ThresholdKind::scad);
}

TEST(ThresholdCovariance, ZeroLambdaAndLargeLambda) {
  std::mt19937_64 g(2);
  MatrixXd e = gaussian(g, 50, 8);
  MatrixXd s = e.transpose() * e / 50.0;
  for (ThresholdKind kind : kAllKinds) {
    ThresholdedCov c0 = threshold_covariance(e, kind, 0.0);
    EXPECT_LE((c0.matrix - s).cwiseAbs().maxCoeff(), 1e-14);
    MatrixXd off = s;
    off.diagonal().setZero();
    // Just above the largest entry: the library's blocked product may differ from s in the last ulp.
    ThresholdedCov big = threshold_covariance(e, kind, off.cwiseAbs().maxCoeff() * (1 + 1e-12));
    EXPECT_EQ(big.nnz_offdiag, 0);
    MatrixXd diag = s.diagonal().asDiagonal();
    EXPECT_LE((big.matrix - diag).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_THROW(threshold_covariance(e, ThresholdKind::soft, -1.0), InvalidArgument);
  EXPECT_THROW(threshold_covariance(e.topRows(1), ThresholdKind::soft, 0.1), InvalidArgument);
}

TEST(ThresholdCovariance, InvariantsAndMonotoneSupport) {
  std::mt19937_64 g(3);
  // 300 columns with the default 256 block size exercises the block seams.
  MatrixXd e = correlated_draws(g, toeplitz(0.4, 300), 40);
  MatrixXd s = e.transpose() * e / 40.0;
  for (ThresholdKind kind : kAllKinds) {
    Index prev = std::numeric_limits<Index>::max();
    for (double lam : {0.0, 0.05, 0.1, 0.2, 0.4, 0.8}) {
      ThresholdedCov c = threshold_covariance(e, kind, lam);
      EXPECT_LE((c.matrix - c.matrix.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_TRUE((c.matrix.cwiseAbs().array() <= s.cwiseAbs().array() * (1 + 1e-13) + 1e-15).all());
      EXPECT_LE((c.matrix.diagonal() - s.diagonal()).cwiseAbs().maxCoeff(), 1e-14);
      for (Index j = 0; j < 300; ++j)
        for (Index i = 0; i < 300; ++i)
          if (i != j && std::abs(s(i, j)) <= lam * (1 - 1e-12)) { ASSERT_EQ(c.matrix(i, j), 0.0); }
      EXPECT_LE(c.nnz_offdiag, prev);
      prev = c.nnz_offdiag;
    }
  }
}

TEST(ThresholdCovariance, KroneckerToeplitzAgainstSampleCovariance) {
  std::mt19937_64 g(4);
  const Index dk = 10, d = dk * dk;
  MatrixXd sigma = Eigen::kroneckerProduct(toeplitz(0.5, dk), toeplitz(0.5, dk));
  auto lam_for = [&](Index T) { return std::sqrt(std::log(double(d)) / T) + std::sqrt(1.0 / d); };

  // Fewer observations than dimensions: hard thresholding wins.
  MatrixXd short_e = correlated_draws(g, sigma, 50);
  const double short_raw = spectral_norm(short_e.transpose() * short_e / 50.0 - sigma);
  EXPECT_LT(spectral_norm(threshold_covariance(short_e, ThresholdKind::hard, lam_for(50)).matrix - sigma), short_raw);

  // At T = 2000 the sample covariance is already accurate, and thresholding
  // the population matrix itself costs more than the sampling error.
  const Index T = 2000;
  MatrixXd e = correlated_draws(g, sigma, T);
  const double raw_err = spectral_norm(e.transpose() * e / double(T) - sigma);
  MatrixXd pop = sigma;
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i)
      if (i != j) pop(i, j) = apply_threshold(sigma(i, j), {ThresholdKind::hard, lam_for(T)});
  EXPECT_GT(spectral_norm(pop - sigma), raw_err);
  for (ThresholdKind kind : kAllKinds)
    EXPECT_GT(spectral_norm(threshold_covariance(e, kind, lam_for(T)).matrix - sigma), raw_err) << to_string(kind);
}

TEST(ThresholdCovariance, IdentityErrorShrinksAlongRate) {
  std::mt19937_64 g(5);
  const Index d = 100;
  std::vector<double> errs;
  for (Index T : {100, 400, 1600}) {
    double total = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      MatrixXd e = gaussian(g, T, d);
      const double lam = std::sqrt(std::log(double(d)) / T) + std::sqrt(1.0 / d);
      total += spectral_norm(threshold_covariance(e, ThresholdKind::scad, lam).matrix - MatrixXd::Identity(d, d));
    }
    errs.push_back(total / 10);
  }
  EXPECT_GT(errs[0], errs[1]);
  EXPECT_GT(errs[1], errs[2]);
}

TEST(ThresholdCovariance, TripletExport) {
  MatrixXd e(3, 2);
  e << 1, 1, -1, 1, 1, -1;
  ThresholdedCov c = threshold_covariance(e, ThresholdKind::hard, 0.5);
  const auto path = std::filesystem::temp_directory_path() / "tdi_triplets.csv";
  write_triplets(c, path.string());
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "i,j,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);  // off-diagonal 1/3 is killed, both unit diagonals kept
  std::filesystem::remove(path);
}

TEST(Gamma1, ZeroResidualsAndClosedForm) {
  MatrixXd b = MatrixXd::Constant(10, 1, 0.1);
  EXPECT_EQ(gamma1_diagonal(b, MatrixXd::Zero(20, 10)), MatrixXd::Zero(1, 1));
  MatrixXd e(4, 10);
  for (Index t = 0; t < 4; ++t)
    for (Index j = 0; j < 10; ++j) e(t, j) = ((t + j) % 2) ? 1.0 : -1.0;
  EXPECT_NEAR(gamma1_diagonal(b, e)(0, 0), 0.1, 1e-15);
  EXPECT_THROW(gamma1_diagonal(b, e, 4), InvalidArgument);
  EXPECT_THROW(gamma1_diagonal(MatrixXd::Ones(9, 1), e), DimensionError);
}

TEST(Gamma1, EqualsGamma2WhenEveryOffDiagonalIsKilled) {
  std::mt19937_64 g(6);
  MatrixXd b = gaussian(g, 12, 2);
  MatrixXd e = gaussian(g, 30, 12);
  ThresholdedCov c = threshold_covariance(e, ThresholdKind::soft, 1e6);
  EXPECT_LE((gamma1_diagonal(b, e) - gamma2_thresholded(b, c)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Gamma2, TrivialCasesAndNaiveLoops) {
  std::mt19937_64 g(7);
  MatrixXd q = tdi_test::orthonormal(g, 6, 2);
  ThresholdedCov id;
  id.matrix = MatrixXd::Identity(6, 6);
  EXPECT_LE((gamma2_thresholded(q, id) - q.transpose() * q).cwiseAbs().maxCoeff(), 1e-14);
  ThresholdedCov zero;
  zero.matrix = MatrixXd::Zero(6, 6);
  EXPECT_EQ(gamma2_thresholded(q, zero), MatrixXd::Zero(2, 2));

  MatrixXd e = gaussian(g, 25, 6);
  MatrixXd b = gaussian(g, 6, 1);
  ThresholdedCov c = threshold_covariance(e, ThresholdKind::scad, 0.2);
  double naive = 0.0;
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) naive += b(i, 0) * c.matrix(i, j) * b(j, 0);
  EXPECT_NEAR(gamma2_thresholded(b, c)(0, 0), naive, 1e-13);
  EXPECT_THROW(gamma2_thresholded(MatrixXd::Ones(5, 1), c), DimensionError);
}

TEST(Gamma2, StreamedEqualsMaterialized) {
  sim::DgpConfig cfg;
  cfg.dims = {25, 24};  // 600 entries, three column blocks
  cfg.T = 150;
  sim::DgpSample smp = sim::generate(cfg, 8);
  CpFit fit = cc_iso(smp.series, 3);
  MatrixXd e = residual_matrix(smp.series, fit);
  for (ThresholdKind kind : kAllKinds) {
    const ThresholdRule rule{kind, 0.1, 3.7};
    MatrixXd streamed = gamma2_thresholded(fit, e, rule);
    MatrixXd dense = gamma2_thresholded(fit, threshold_covariance(e, kind, 0.1));
    EXPECT_LE((streamed - dense).cwiseAbs().maxCoeff(), 1e-10 * dense.cwiseAbs().maxCoeff());
  }
}

TEST(Hac, ExpandedSumAtDimensionFour) {
  std::mt19937_64 g(9);
  MatrixXd l = gaussian(g, 4, 2), e = gaussian(g, 30, 4);
  for (Index n = 1; n <= 4; ++n) {
    MatrixXd expect = MatrixXd::Zero(2, 2);
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < n; ++k) {
        double cov = 0.0;
        for (Index t = 0; t < 30; ++t) cov += e(t, j) * e(t, k);
        expect += l.row(j).transpose() * l.row(k) * (cov / 30.0);
      }
    expect /= double(n);
    EXPECT_LE((hac_gamma(l, e, n) - expect).cwiseAbs().maxCoeff(), 1e-13);
  }
  EXPECT_EQ(hac_gamma(l, MatrixXd::Zero(5, 4), 3), MatrixXd::Zero(2, 2));
  EXPECT_THROW(hac_gamma(l, e, 0), InvalidArgument);
  EXPECT_THROW(hac_gamma(l, e, 5), InvalidArgument);
}

TEST(Hac, KroneckerToeplitzWindowUnderstatesLongRunVariance) {
  const double tau = 0.5;
  const Index d1 = 10, d = d1 * d1;
  MatrixXd sigma = Eigen::kroneckerProduct(toeplitz(tau, d1), toeplitz(tau, d1));
  // Residual rows whose second-moment matrix equals sigma exactly.
  Eigen::LLT<MatrixXd> llt(sigma);
  MatrixXd e = std::sqrt(double(d)) * MatrixXd(llt.matrixU());
  MatrixXd ones = MatrixXd::Ones(d, 1);
  const double window = hac_gamma(ones, e, d1)(0, 0);
  EXPECT_NEAR(window, kron_toeplitz_hac_limit(tau, d1), 1e-12);
  const double full = hac_gamma(ones, e, d)(0, 0);
  EXPECT_NEAR(full, ones.col(0).dot(sigma * ones.col(0)) / d, 1e-10);
  EXPECT_LT(window, full);
}

TEST(KronToeplitz, LadderAndRowSum) {
  EXPECT_EQ(kron_toeplitz_autocov(0.5, 10, 0), 1.0);
  EXPECT_EQ(kron_toeplitz_autocov(0.5, 10, 10), 0.5);
  MatrixXd sigma = Eigen::kroneckerProduct(toeplitz(0.5, 10), toeplitz(0.5, 10));
  double row_sum = 0.0;
  for (Index q = 0; q < 100; ++q) {
    const double gq = kron_toeplitz_autocov(0.5, 10, q);
    EXPECT_NEAR(gq, sigma(0, q), 1e-15);
    if (q + 10 < 100) { EXPECT_NEAR(kron_toeplitz_autocov(0.5, 10, q + 10), 0.5 * gq, 1e-15); }
    row_sum += std::abs(gq);
  }
  EXPECT_LE(row_sum, 4.0);
  EXPECT_THROW(kron_toeplitz_autocov(1.0, 10, 0), InvalidArgument);
  EXPECT_THROW(kron_toeplitz_autocov(0.5, 10, 100), InvalidArgument);
}

TEST(DefaultLambda, RateWithUnitConstant) {
  EXPECT_NEAR(default_threshold_lambda(100, 400, 10.0), std::sqrt(std::log(100.0) / 400) + 0.1, 1e-15);
  EXPECT_THROW(default_threshold_lambda(100, 400, 0.0), InvalidArgument);
}
