// SPDX-License-Identifier: MIT
// Simulate a 20x20 panel, fit three CP factors, forecast y_{T+1} with an interval.
#include <iostream>

#include "tdi/covariance.hpp"
#include "tdi/cp_factor.hpp"
#include "tdi/regression.hpp"
#include "tdi/sim/dgp.hpp"

int main() {
  tdi::sim::DgpConfig cfg;
  cfg.dims = {20, 20};
  cfg.T = 300;
  tdi::sim::DgpSample s = tdi::sim::generate(cfg, 7);

  tdi::CpFit cp = tdi::cc_iso(s.series, 3);
  std::cout << "signals: " << cp.signals.transpose() << "  (true " << s.truth.signals.transpose() << ")\n";
  std::cout << "iterations: " << cp.iterations_used << (cp.converged ? ", converged\n" : ", not converged\n");

  tdi::DiffusionFit ols = tdi::fit_ols(s.truth.y, s.truth.w, cp, 1);
  const tdi::Index d = s.series.slice_size();
  const tdi::ThresholdRule rule{tdi::ThresholdKind::scad, tdi::default_threshold_lambda(d, cfg.T, cp.signals(2)), 3.7};
  tdi::MatrixXd gamma = tdi::gamma2_thresholded(cp, tdi::residual_matrix(s.series, cp), rule);
  tdi::PredictionInterval pi = tdi::prediction_interval(ols, cp, gamma, s.truth.w.row(cfg.T - 1).transpose(), 0.95);
  std::cout << "forecast " << pi.point << " in [" << pi.lower << ", " << pi.upper << "], conditional mean "
            << s.truth.conditional_mean << '\n';
  return 0;
}
