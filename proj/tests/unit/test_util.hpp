// SPDX-License-Identifier: MIT
#pragma once

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "tdi/tensor.hpp"

namespace tdi_test {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd gaussian(std::mt19937_64& g, Index r, Index c) {
  std::normal_distribution<double> n;
  MatrixXd m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = n(g);
  return m;
}

inline VectorXd gaussian(std::mt19937_64& g, Index n) { return gaussian(g, n, 1).col(0); }

/// Multi-index for linear offset `off` under first-mode-fastest order.
inline std::vector<Index> unravel(Index off, const tdi::Dims& dims) {
  std::vector<Index> idx(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    idx[k] = off % dims[k];
    off /= dims[k];
  }
  return idx;
}

inline Index ravel(const std::vector<Index>& idx, const tdi::Dims& dims) {
  Index off = 0;
  for (Index k = static_cast<Index>(dims.size()) - 1; k >= 0; --k) off = off * dims[k] + idx[k];
  return off;
}

/// Columns orthonormalized by QR.
inline MatrixXd orthonormal(std::mt19937_64& g, Index n, Index r) {
  Eigen::HouseholderQR<MatrixXd> qr(gaussian(g, n, r));
  return qr.householderQ() * MatrixXd::Identity(n, r);
}

inline double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace tdi_test
