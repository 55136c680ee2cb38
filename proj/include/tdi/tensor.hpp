// SPDX-License-Identifier: MIT
// Dense tensors, tensor time series and the contraction kernels built on them.
//
// Linearization: the first mode varies fastest. Entry (i_1, ..., i_K) of a
// d_1 x ... x d_K tensor sits at offset i_1 + d_1 (i_2 + d_2 (i_3 + ...)).
// With this order vec(v_1 o v_2 o ... o v_K) = v_K (x) ... (x) v_1.
// Modes are 0-based in this API.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tdi/error.hpp"

namespace tdi {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using Dims = std::vector<Index>;

inline Index dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
}

inline std::string dims_string(const Dims& dims) {
  std::string s;
  for (std::size_t k = 0; k < dims.size(); ++k) s += (k ? "x" : "") + std::to_string(dims[k]);
  return s;
}

inline void check_dims(const Dims& dims) {
  if (dims.empty()) throw DimensionError("tensor needs at least one mode");
  for (std::size_t k = 0; k < dims.size(); ++k)
    if (dims[k] < 1) throw DimensionError("mode " + std::to_string(k) + " has non-positive size");
}

inline void check_mode(const Dims& dims, Index k) {
  if (k < 0 || k >= static_cast<Index>(dims.size()))
    throw DimensionError("mode " + std::to_string(k) + " out of range for a " + std::to_string(dims.size()) +
                         "-mode tensor");
}

/// Immutable dense K-mode tensor.
class Tensor {
 public:
  Tensor(Dims dims, VectorXd data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (data_.size() != dims_product(dims_))
      throw DimensionError("tensor data has " + std::to_string(data_.size()) + " entries, dims " +
                           dims_string(dims_) + " need " + std::to_string(dims_product(dims_)));
  }
  static Tensor zeros(Dims dims) {
    check_dims(dims);
    const Index n = dims_product(dims);
    return Tensor(std::move(dims), VectorXd::Zero(n));
  }

  const Dims& dims() const noexcept { return dims_; }
  Index order() const noexcept { return static_cast<Index>(dims_.size()); }
  Index dim(Index k) const {
    check_mode(dims_, k);
    return dims_[static_cast<std::size_t>(k)];
  }
  Index size() const noexcept { return data_.size(); }
  const VectorXd& data() const noexcept { return data_; }

  Index offset(std::span<const Index> idx) const {
    if (static_cast<Index>(idx.size()) != order()) throw DimensionError("index has wrong number of modes");
    Index off = 0;
    for (Index k = order() - 1; k >= 0; --k) {
      const Index i = idx[static_cast<std::size_t>(k)];
      if (i < 0 || i >= dims_[static_cast<std::size_t>(k)])
        throw DimensionError("index out of range in mode " + std::to_string(k));
      off = off * dims_[static_cast<std::size_t>(k)] + i;
    }
    return off;
  }
  double operator()(std::initializer_list<Index> idx) const {
    return data_(offset(std::span<const Index>(idx.begin(), idx.size())));
  }
  double frobenius_norm() const { return data_.norm(); }

 private:
  Dims dims_;
  VectorXd data_;
};

namespace detail {

/// Contracts the middle axis of a column-major (left, n, right) buffer with v.
inline VectorXd contract_axis(const double* src, Index left, Index n, Index right, const VectorXd& v) {
  VectorXd out(left * right);
  if (left == 1) {
    out.noalias() = Eigen::Map<const MatrixXd>(src, n, right).transpose() * v;
  } else {
    for (Index r = 0; r < right; ++r)
      out.segment(r * left, left).noalias() = Eigen::Map<const MatrixXd>(src + r * left * n, left, n) * v;
  }
  return out;
}

/// Multiplies the middle axis of a (left, n, right) buffer by u (m x n), giving (left, m, right).
inline VectorXd multiply_axis(const double* src, Index left, Index n, Index right, const MatrixXd& u) {
  const Index m = u.rows();
  VectorXd out(left * m * right);
  if (left == 1) {
    Eigen::Map<MatrixXd>(out.data(), m, right).noalias() = u * Eigen::Map<const MatrixXd>(src, n, right);
  } else {
    for (Index r = 0; r < right; ++r)
      Eigen::Map<MatrixXd>(out.data() + r * left * m, left, m).noalias() =
          Eigen::Map<const MatrixXd>(src + r * left * n, left, n) * u.transpose();
  }
  return out;
}

inline Index span_product(const std::vector<Index>& s, std::size_t from, std::size_t to) {
  Index p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

/// Contracts the axes of `shape` whose entry in `vecs` is non-null. Axes past
/// vecs.size() are kept. The surviving axes keep their relative order.
inline VectorXd contract_axes(const double* src, std::vector<Index> shape, const std::vector<const VectorXd*>& vecs) {
  VectorXd buf;
  const double* cur = src;
  for (Index m = static_cast<Index>(vecs.size()) - 1; m >= 0; --m) {
    const VectorXd* v = vecs[static_cast<std::size_t>(m)];
    if (!v) continue;
    const auto mm = static_cast<std::size_t>(m);
    VectorXd next = contract_axis(cur, span_product(shape, 0, mm), shape[mm], span_product(shape, mm + 1, shape.size()), *v);
    buf = std::move(next);
    cur = buf.data();
    shape.erase(shape.begin() + m);
  }
  if (cur == src) buf = Eigen::Map<const VectorXd>(src, span_product(shape, 0, shape.size()));
  return buf;
}

}  // namespace detail

/// Mode-k product: (A x_k U)_{..j..} = sum_{i_k} A_{..i_k..} U_{j,i_k}, U of shape r_k x d_k.
inline Tensor mode_product(const Tensor& t, const MatrixXd& u, Index k) {
  check_mode(t.dims(), k);
  const auto kk = static_cast<std::size_t>(k);
  if (u.cols() != t.dims()[kk])
    throw DimensionError("mode " + std::to_string(k) + " product: matrix has " + std::to_string(u.cols()) +
                         " columns but the mode has size " + std::to_string(t.dims()[kk]));
  if (u.rows() < 1) throw DimensionError("mode " + std::to_string(k) + " product: matrix has no rows");
  Dims out_dims = t.dims();
  out_dims[kk] = u.rows();
  return Tensor(out_dims, detail::multiply_axis(t.data().data(), detail::span_product(t.dims(), 0, kk), t.dims()[kk],
                                                detail::span_product(t.dims(), kk + 1, t.dims().size()), u));
}

inline void check_vectors(const Dims& dims, const std::vector<VectorXd>& vectors, Index skip = -1) {
  if (vectors.size() != dims.size())
    throw DimensionError("expected " + std::to_string(dims.size()) + " vectors, got " + std::to_string(vectors.size()));
  for (std::size_t k = 0; k < dims.size(); ++k)
    if (static_cast<Index>(k) != skip && vectors[k].size() != dims[k])
      throw DimensionError("mode " + std::to_string(k) + ": vector has length " + std::to_string(vectors[k].size()) +
                           ", mode size is " + std::to_string(dims[k]));
}

/// Full contraction A x_1 v_1' x_2 ... x_K v_K'.
inline double multi_mode_contract(const Tensor& t, const std::vector<VectorXd>& vectors) {
  check_vectors(t.dims(), vectors);
  std::vector<const VectorXd*> ptrs;
  for (const auto& v : vectors) ptrs.push_back(&v);
  return detail::contract_axes(t.data().data(), t.dims(), ptrs)(0);
}

inline Tensor outer_product(const std::vector<VectorXd>& vectors) {
  if (vectors.empty()) throw DimensionError("outer_product: empty vector list");
  Dims dims;
  VectorXd data = VectorXd::Ones(1);
  for (const auto& v : vectors) {
    if (v.size() == 0) throw DimensionError("outer_product: empty vector in mode " + std::to_string(dims.size()));
    dims.push_back(v.size());
    VectorXd next(data.size() * v.size());
    for (Index i = 0; i < v.size(); ++i) next.segment(i * data.size(), data.size()) = v(i) * data;
    data = std::move(next);
  }
  return Tensor(dims, data);
}

/// Column-wise Kronecker product: column i is a_i (x) b_i (entries of b vary fastest).
inline MatrixXd khatri_rao(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols())
    throw DimensionError("khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
  MatrixXd out(a.rows() * b.rows(), a.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i) out.col(j).segment(i * b.rows(), b.rows()) = a(i, j) * b.col(j);
  return out;
}

/// A_K * ... * A_1, so column i is vec(a_{i1} o ... o a_{iK}).
inline MatrixXd khatri_rao_chain(const std::vector<MatrixXd>& factors) {
  if (factors.empty()) throw DimensionError("khatri_rao_chain: empty list");
  MatrixXd out = factors.front();
  for (std::size_t k = 1; k < factors.size(); ++k) out = khatri_rao(factors[k], out);
  return out;
}

inline VectorXd vectorize(const Tensor& t) { return t.data(); }

/// Mode-k unfolding, d_k x (d/d_k). Remaining modes index columns in increasing
/// order with the lowest varying fastest.
inline MatrixXd unfold(const Tensor& t, Index k) {
  check_mode(t.dims(), k);
  const auto kk = static_cast<std::size_t>(k);
  const Index left = detail::span_product(t.dims(), 0, kk);
  const Index n = t.dims()[kk];
  const Index right = detail::span_product(t.dims(), kk + 1, t.dims().size());
  MatrixXd out(n, left * right);
  const double* p = t.data().data();
  for (Index r = 0; r < right; ++r)
    for (Index i = 0; i < n; ++i)
      for (Index l = 0; l < left; ++l) out(i, l + left * r) = p[l + left * (i + n * r)];
  return out;
}

/// Immutable sequence of equally shaped tensors X_1, ..., X_T stored as a d x T
/// matrix whose column t is vec(X_t).
class TensorSeries {
 public:
  TensorSeries(Dims dims, MatrixXd slices, std::vector<std::int64_t> timestamps = {})
      : dims_(std::move(dims)), data_(std::move(slices)), timestamps_(std::move(timestamps)) {
    check_dims(dims_);
    if (data_.rows() != dims_product(dims_))
      throw DimensionError("series slices have " + std::to_string(data_.rows()) + " entries, dims " +
                           dims_string(dims_) + " need " + std::to_string(dims_product(dims_)));
    if (data_.cols() < 1) throw DimensionError("series must contain at least one slice");
    if (!timestamps_.empty() && static_cast<Index>(timestamps_.size()) != data_.cols())
      throw DimensionError("series has " + std::to_string(data_.cols()) + " slices but " +
                           std::to_string(timestamps_.size()) + " timestamps");
  }
  static TensorSeries from_tensors(const std::vector<Tensor>& slices) {
    if (slices.empty()) throw DimensionError("series must contain at least one slice");
    const Dims& dims = slices.front().dims();
    MatrixXd data(slices.front().size(), static_cast<Index>(slices.size()));
    for (std::size_t t = 0; t < slices.size(); ++t) {
      if (slices[t].dims() != dims)
        throw DimensionError("slice " + std::to_string(t) + " has dims " + dims_string(slices[t].dims()) +
                             ", expected " + dims_string(dims));
      data.col(static_cast<Index>(t)) = slices[t].data();
    }
    return TensorSeries(dims, std::move(data));
  }

  const Dims& dims() const noexcept { return dims_; }
  Index order() const noexcept { return static_cast<Index>(dims_.size()); }
  Index slice_size() const noexcept { return data_.rows(); }
  Index length() const noexcept { return data_.cols(); }
  const MatrixXd& matrix() const noexcept { return data_; }
  const std::vector<std::int64_t>& timestamps() const noexcept { return timestamps_; }

  Tensor slice(Index t) const {
    if (t < 0 || t >= length()) throw DimensionError("slice index " + std::to_string(t) + " out of range");
    return Tensor(dims_, data_.col(t));
  }
  /// First n slices.
  TensorSeries head(Index n) const {
    if (n < 1 || n > length()) throw DimensionError("head: length " + std::to_string(n) + " out of range");
    std::vector<std::int64_t> ts;
    if (!timestamps_.empty()) ts.assign(timestamps_.begin(), timestamps_.begin() + n);
    return TensorSeries(dims_, data_.leftCols(n), std::move(ts));
  }

 private:
  Dims dims_;
  MatrixXd data_;
  std::vector<std::int64_t> timestamps_;
};

/// Contracts every mode except `keep` of every slice: column t of the result is
/// X_t x_{k != keep} v_k'. Result is d_keep x T.
inline MatrixXd contract_except(const TensorSeries& s, const std::vector<VectorXd>& vectors, Index keep) {
  check_mode(s.dims(), keep);
  check_vectors(s.dims(), vectors, keep);
  std::vector<const VectorXd*> ptrs;
  for (std::size_t k = 0; k < vectors.size(); ++k) ptrs.push_back(static_cast<Index>(k) == keep ? nullptr : &vectors[k]);
  std::vector<Index> shape = s.dims();
  shape.push_back(s.length());
  VectorXd flat = detail::contract_axes(s.matrix().data(), shape, ptrs);
  return Eigen::Map<const MatrixXd>(flat.data(), s.dims()[static_cast<std::size_t>(keep)], s.length());
}

/// Length-T vector of full contractions X_t x_1 v_1' ... x_K v_K'.
inline VectorXd contract_all(const TensorSeries& s, const std::vector<VectorXd>& vectors) {
  check_vectors(s.dims(), vectors);
  std::vector<const VectorXd*> ptrs;
  for (const auto& v : vectors) ptrs.push_back(&v);
  std::vector<Index> shape = s.dims();
  shape.push_back(s.length());
  return detail::contract_axes(s.matrix().data(), shape, ptrs);
}

/// sum_t unfold(X_t, k) unfold(X_t, k)'.
inline MatrixXd mode_gram(const TensorSeries& s, Index k) {
  check_mode(s.dims(), k);
  const auto kk = static_cast<std::size_t>(k);
  const Index left = detail::span_product(s.dims(), 0, kk);
  const Index n = s.dims()[kk];
  const Index right = detail::span_product(s.dims(), kk + 1, s.dims().size()) * s.length();
  MatrixXd g = MatrixXd::Zero(n, n);
  const double* p = s.matrix().data();
  if (left == 1) {
    Eigen::Map<const MatrixXd> m(p, n, right);
    g.selfadjointView<Eigen::Lower>().rankUpdate(m);
  } else {
    for (Index r = 0; r < right; ++r) {
      Eigen::Map<const MatrixXd> blk(p + r * left * n, left, n);
      g.selfadjointView<Eigen::Lower>().rankUpdate(blk.transpose());
    }
  }
  return g.selfadjointView<Eigen::Lower>();
}

/// Applies U (r x d_k) along mode k of every slice.
inline TensorSeries series_mode_product(const TensorSeries& s, const MatrixXd& u, Index k) {
  check_mode(s.dims(), k);
  const auto kk = static_cast<std::size_t>(k);
  if (u.cols() != s.dims()[kk])
    throw DimensionError("mode " + std::to_string(k) + " product: matrix has " + std::to_string(u.cols()) +
                         " columns but the mode has size " + std::to_string(s.dims()[kk]));
  Dims out_dims = s.dims();
  out_dims[kk] = u.rows();
  VectorXd flat = detail::multiply_axis(s.matrix().data(), detail::span_product(s.dims(), 0, kk), s.dims()[kk],
                                        detail::span_product(s.dims(), kk + 1, s.dims().size()) * s.length(), u);
  return TensorSeries(out_dims, Eigen::Map<const MatrixXd>(flat.data(), dims_product(out_dims), s.length()),
                      s.timestamps());
}

}  // namespace tdi
