// SPDX-License-Identifier: MIT
// Synthetic CP factor panels with a diffusion-index or high-dimensional target.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tdi/cp_factor.hpp"
#include "tdi/error.hpp"
#include "tdi/linalg.hpp"
#include "tdi/tensor.hpp"

namespace tdi::sim {

/// splitmix64 finalizer, used to spread replication seeds before seeding the engine.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// mt19937_64 seeded through splitmix64, with libstdc++ distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}
  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double student_t(double df) { return std::student_t_distribution<double>(df)(engine_); }
  MatrixXd normal_matrix(Index rows, Index cols) {
    MatrixXd m(rows, cols);
    double* p = m.data();
    for (Index i = 0; i < m.size(); ++i) p[i] = normal_(engine_);
    return m;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

enum class FactorLaw { independent_ar, correlated_ar, iid_normal };
enum class NoiseLaw { gaussian, student_t };
/// sigma_normalized: a = S^{1/2} q / sqrt(q' S q) for orthonormal q.
/// sigma_scaled: A = S Q, columns not normalized.
enum class LoadingLaw { sigma_normalized, sigma_scaled };
enum class TargetLaw { none, diffusion, high_dim };

struct DgpConfig {
  Dims dims{40, 40};
  Index rank = 3;
  Index T = 500;
  double alpha = 0.6;                 // s_i = m_i * sqrt(d^alpha)
  std::vector<double> signal_multipliers;  // empty: r - i + 1
  std::vector<double> rho{0.6, 0.5, 0.4};
  FactorLaw factor_law = FactorLaw::independent_ar;
  double factor_corr = 0.5;           // Toeplitz parameter of the factor mixing matrix
  NoiseLaw noise = NoiseLaw::gaussian;
  double noise_tau = 0.5;             // each mode covariance is Toeplitz(noise_tau)
  double noise_scale = 1.0;           // 0 gives a noiseless panel
  double df = 5.0;
  LoadingLaw loading_law = LoadingLaw::sigma_normalized;

  TargetLaw target = TargetLaw::diffusion;
  Index horizon = 1;
  double intercept = 0.5;
  std::vector<double> beta1;          // empty: 0.5 for every factor (and the constant in high_dim)
  // high-dimensional predictors w_t = Lambda (1, f_t) + V_t
  Index p = 200;
  Index p0 = 3;
  double beta0_value = 0.5;
  bool zero_lambda = false;
  double v_tau = 0.0;                 // V_t ~ N(0, Toeplitz(v_tau, p)); 0 gives iid
  bool keep_noise = false;

  Index d() const { return dims_product(dims); }

  void validate() const {
    check_dims(dims);
    if (rank < 1) throw InvalidArgument("DGP: rank must be >= 1");
    for (Index dk : dims)
      if (dk < rank) throw InvalidArgument("DGP: every mode must be at least the rank");
    if (T < 2) throw InvalidArgument("DGP: T must be >= 2");
    if (static_cast<Index>(rho.size()) != rank) throw InvalidArgument("DGP: need one AR coefficient per factor");
    for (double r : rho)
      if (!(r > -1.0 && r < 1.0)) throw InvalidArgument("DGP: AR coefficients must lie in (-1,1)");
    if (!(noise_tau >= 0.0 && noise_tau < 1.0)) throw InvalidArgument("DGP: noise tau must lie in [0,1)");
    if (!(noise_scale >= 0.0)) throw InvalidArgument("DGP: noise scale must be non-negative");
    if (!(v_tau >= 0.0 && v_tau < 1.0)) throw InvalidArgument("DGP: V tau must lie in [0,1)");
    if (!(factor_corr > -1.0 && factor_corr < 1.0)) throw InvalidArgument("DGP: factor correlation must lie in (-1,1)");
    if (noise == NoiseLaw::student_t && !(df > 2.0)) throw InvalidArgument("DGP: Student-t degrees of freedom must exceed 2");
    if (!signal_multipliers.empty() && static_cast<Index>(signal_multipliers.size()) != rank)
      throw InvalidArgument("DGP: need one signal multiplier per factor");
    if (horizon < 1) throw InvalidArgument("DGP: horizon must be >= 1");
    if (target == TargetLaw::high_dim && (p < 1 || p0 < 0 || p0 > p)) throw InvalidArgument("DGP: need 0 <= p0 <= p, p >= 1");
    const Index nb = target == TargetLaw::high_dim ? rank + 1 : rank;
    if (!beta1.empty() && static_cast<Index>(beta1.size()) != nb)
      throw InvalidArgument("DGP: beta1 must have " + std::to_string(nb) + " entries");
  }
};

struct DgpTruth {
  MatrixXd factors;                 // T x r
  std::vector<MatrixXd> loadings;   // d_k x r
  VectorXd signals;
  std::vector<MatrixXd> mode_covariances;  // Toeplitz(noise_tau, d_k)
  MatrixXd noise;                   // d x T, only when keep_noise
  VectorXd y;                       // T
  MatrixXd w;                       // T x p (a column of ones for the diffusion target)
  MatrixXd v;                       // T x p
  MatrixXd lambda;                  // p x (r+1)
  VectorXd beta0;
  VectorXd beta1;
  VectorXd eps;                     // T
  double conditional_mean = 0.0;    // E[y_{T+h} | information at T]
};

struct DgpSample {
  TensorSeries series;
  DgpTruth truth;
};

inline DgpSample generate(const DgpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const Index K = static_cast<Index>(cfg.dims.size());
  const Index r = cfg.rank;
  const Index T = cfg.T;
  const Index h = cfg.horizon;
  const Index d = cfg.d();
  DgpTruth tr;

  for (Index k = 0; k < K; ++k) {
    const Index dk = cfg.dims[static_cast<std::size_t>(k)];
    MatrixXd sig = toeplitz(cfg.noise_tau, dk);
    MatrixXd raw = rng.normal_matrix(dk, r);
    Eigen::HouseholderQR<MatrixXd> qr(raw);
    MatrixXd q = qr.householderQ() * MatrixXd::Identity(dk, r);
    MatrixXd a(dk, r);
    if (cfg.loading_law == LoadingLaw::sigma_normalized) {
      MatrixXd root = sym_sqrt(sig);
      for (Index i = 0; i < r; ++i) a.col(i) = root * q.col(i) / std::sqrt(q.col(i).dot(sig * q.col(i)));
    } else {
      a = sig * q;
    }
    tr.loadings.push_back(std::move(a));
    tr.mode_covariances.push_back(std::move(sig));
  }

  tr.signals.resize(r);
  const double scale = std::sqrt(std::pow(static_cast<double>(d), cfg.alpha));
  for (Index i = 0; i < r; ++i)
    tr.signals(i) = (cfg.signal_multipliers.empty() ? static_cast<double>(r - i) : cfg.signal_multipliers[static_cast<std::size_t>(i)]) * scale;

  // factor path over times 1-h .. T; row j is time j - h + 1
  const Index len = T + h;
  MatrixXd path(len, r);
  for (Index i = 0; i < r; ++i) {
    const double rho = cfg.factor_law == FactorLaw::iid_normal ? 0.0 : cfg.rho[static_cast<std::size_t>(i)];
    const double innov = std::sqrt(1.0 - rho * rho);
    double prev = rng.normal();
    for (Index t = 0; t < len; ++t) {
      prev = rho * prev + innov * rng.normal();
      path(t, i) = prev;
    }
  }
  if (cfg.factor_law == FactorLaw::correlated_ar) path = path * sym_sqrt(toeplitz(cfg.factor_corr, r));
  tr.factors = path.bottomRows(T);

  MatrixXd noise(d, T);
  if (cfg.noise == NoiseLaw::gaussian) {
    noise = rng.normal_matrix(d, T);
  } else {
    double* p = noise.data();
    for (Index i = 0; i < noise.size(); ++i) p[i] = rng.student_t(cfg.df);
  }
  if (cfg.noise_tau > 0.0) {
    TensorSeries z(cfg.dims, std::move(noise));
    for (Index k = 0; k < K; ++k) z = series_mode_product(z, sym_sqrt(tr.mode_covariances[static_cast<std::size_t>(k)]), k);
    noise = z.matrix();
  }
  MatrixXd x = khatri_rao_chain(tr.loadings) * tr.signals.asDiagonal() * tr.factors.transpose();
  if (cfg.noise_scale != 1.0) noise *= cfg.noise_scale;
  x += noise;
  if (cfg.keep_noise) tr.noise = std::move(noise);

  tr.eps.resize(T);
  if (cfg.target != TargetLaw::none) {
    for (Index t = 0; t < T; ++t) {
      if (cfg.noise == NoiseLaw::student_t) {
        tr.eps(t) = rng.student_t(cfg.df);
      } else {
        const double nu = rng.uniform(0.5, 1.5);
        tr.eps(t) = std::sqrt(nu) * rng.normal();
      }
    }
  } else {
    tr.eps.setZero();
  }

  if (cfg.target == TargetLaw::diffusion) {
    tr.beta0 = VectorXd::Constant(1, cfg.intercept);
    tr.beta1 = cfg.beta1.empty() ? VectorXd(VectorXd::Constant(r, 0.5)) : VectorXd(Eigen::Map<const VectorXd>(cfg.beta1.data(), r));
    tr.w = MatrixXd::Ones(T, 1);
    tr.y.resize(T);
    for (Index t = 0; t < T; ++t) tr.y(t) = cfg.intercept + tr.beta1.dot(path.row(t).transpose()) + tr.eps(t);
    tr.conditional_mean = cfg.intercept + tr.beta1.dot(tr.factors.row(T - 1).transpose());
  } else if (cfg.target == TargetLaw::high_dim) {
    const Index p = cfg.p;
    MatrixXd zpath(len, r + 1);
    zpath.col(0).setOnes();
    zpath.rightCols(r) = path;
    tr.lambda = MatrixXd::Zero(p, r + 1);
    if (!cfg.zero_lambda)
      for (Index j = 0; j < r + 1; ++j)
        for (Index i = 0; i < p; ++i) tr.lambda(i, j) = rng.uniform(-1.0, 1.0);
    MatrixXd vpath = rng.normal_matrix(len, p);
    if (cfg.v_tau > 0.0) vpath = vpath * sym_sqrt(toeplitz(cfg.v_tau, p));
    MatrixXd wpath = zpath * tr.lambda.transpose() + vpath;
    tr.beta0 = VectorXd::Zero(p);
    tr.beta0.head(cfg.p0).setConstant(cfg.beta0_value);
    tr.beta1 = cfg.beta1.empty() ? VectorXd(VectorXd::Constant(r + 1, 0.5)) : VectorXd(Eigen::Map<const VectorXd>(cfg.beta1.data(), r + 1));
    tr.y.resize(T);
    for (Index t = 0; t < T; ++t) tr.y(t) = tr.beta0.dot(wpath.row(t).transpose()) + tr.beta1.dot(zpath.row(t).transpose()) + tr.eps(t);
    tr.w = wpath.bottomRows(T);
    tr.v = vpath.bottomRows(T);
    tr.conditional_mean = tr.beta0.dot(tr.w.row(T - 1).transpose()) + tr.beta1.dot(zpath.row(len - 1).transpose());
  }
  return DgpSample{TensorSeries(cfg.dims, std::move(x)), std::move(tr)};
}

/// Reorders and re-signs the estimated components to match the truth:
/// the permutation maximizes sum_i prod_k |<a_hat, a>| and each sign follows
/// prod_k <a_hat, a>. Sign flips are applied to the first mode's loading and
/// the factor column, which leaves the fitted tensor unchanged.
inline CpFit align_to_truth(const CpFit& fit, const DgpTruth& truth) {
  const Index r = fit.rank;
  if (static_cast<Index>(truth.signals.size()) != r) throw InvalidArgument("align_to_truth: rank differs from the truth");
  MatrixXd score = MatrixXd::Ones(r, r);  // (truth i, estimate j)
  MatrixXd signed_score = MatrixXd::Ones(r, r);
  for (std::size_t k = 0; k < fit.loadings.size(); ++k) {
    MatrixXd ip = truth.loadings[k].transpose() * fit.loadings[k];
    VectorXd norms = truth.loadings[k].colwise().norm();
    for (Index i = 0; i < r; ++i) ip.row(i) /= norms(i);
    signed_score = signed_score.cwiseProduct(ip);
  }
  score = signed_score.cwiseAbs();
  std::vector<Index> perm(static_cast<std::size_t>(r)), best;
  std::iota(perm.begin(), perm.end(), Index{0});
  double best_val = -1.0;
  if (r <= 7) {
    do {
      double v = 0.0;
      for (Index i = 0; i < r; ++i) v += score(i, perm[static_cast<std::size_t>(i)]);
      if (v > best_val) {
        best_val = v;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<bool> used(static_cast<std::size_t>(r), false);
    best.assign(static_cast<std::size_t>(r), 0);
    for (Index i = 0; i < r; ++i) {
      Index arg = -1;
      for (Index j = 0; j < r; ++j)
        if (!used[static_cast<std::size_t>(j)] && (arg < 0 || score(i, j) > score(i, arg))) arg = j;
      used[static_cast<std::size_t>(arg)] = true;
      best[static_cast<std::size_t>(i)] = arg;
    }
  }
  CpFit out = fit;
  for (Index i = 0; i < r; ++i) {
    const Index j = best[static_cast<std::size_t>(i)];
    const double sg = signed_score(i, j) < 0.0 ? -1.0 : 1.0;
    out.signals(i) = fit.signals(j);
    out.factors.col(i) = sg * fit.factors.col(j);
    for (std::size_t k = 0; k < fit.loadings.size(); ++k)
      out.loadings[k].col(i) = (k == 0 ? sg : 1.0) * fit.loadings[k].col(j);
  }
  return out;
}

/// f_hat_t - H f_t with H = diag(s / s_hat), on an aligned fit; t is 0-based.
inline VectorXd scaled_factor_error(const CpFit& aligned, const DgpTruth& truth, Index t) {
  VectorXd h = truth.signals.cwiseQuotient(aligned.signals);
  return aligned.factors.row(t).transpose() - h.cwiseProduct(truth.factors.row(t).transpose());
}

}  // namespace tdi::sim
