// SPDX-License-Identifier: MIT
// JSON encodings of fits and intervals. Every top-level document carries schema_version.
#pragma once

#include <json.hpp>

#include <fstream>
#include <string>

#include "tdi/baselines.hpp"
#include "tdi/cp_factor.hpp"
#include "tdi/error.hpp"
#include "tdi/regression.hpp"
#include "tdi/sparse.hpp"

namespace tdi {

using json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

/// Matrices are arrays of rows.
inline json to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + ": expected an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j.front().size()) : 0;
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw DataError(what + ": ragged matrix");
    for (Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline VectorXd vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + ": expected an array");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

inline json to_json(const CpFit& f) {
  json j;
  j["schema_version"] = schema_version;
  j["kind"] = "cp_fit";
  j["dims"] = f.dims;
  j["rank"] = f.rank;
  j["signals"] = to_json(f.signals);
  json loads = json::array();
  for (const auto& a : f.loadings) loads.push_back(to_json(a));
  j["loadings"] = loads;
  j["factors"] = to_json(f.factors);
  j["iterations_used"] = f.iterations_used;
  j["converged"] = f.converged;
  j["final_gap"] = f.final_gap;
  j["gap_history"] = f.gap_history;
  return j;
}

inline CpFit cp_fit_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != schema_version) throw DataError("unsupported CP fit schema_version");
    CpFit f;
    f.dims = j.at("dims").get<Dims>();
    f.rank = j.at("rank").get<Index>();
    f.signals = vector_from_json(j.at("signals"), "signals");
    for (const auto& a : j.at("loadings")) f.loadings.push_back(matrix_from_json(a, "loadings"));
    f.factors = matrix_from_json(j.at("factors"), "factors");
    f.iterations_used = j.at("iterations_used").get<int>();
    f.converged = j.at("converged").get<bool>();
    f.final_gap = j.at("final_gap").get<double>();
    f.gap_history = j.at("gap_history").get<std::vector<double>>();
    return f;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed CP fit JSON: ") + e.what());
  }
}

inline json to_json(const DiffusionFit& f) {
  json j;
  j["beta0"] = to_json(f.beta0);
  j["beta1"] = to_json(f.beta1);
  j["horizon"] = f.horizon;
  j["sample_size"] = f.sample_size;
  j["avar_mode"] = f.avar_mode == AvarMode::hetero ? "hetero" : "homo";
  j["avar_beta"] = to_json(f.avar_beta);
  j["sigma2_eps"] = f.sigma2_eps;
  return j;
}

inline json to_json(const PredictionInterval& p) {
  json j;
  j["point"] = p.point;
  j["std"] = p.std;
  j["level"] = p.level;
  j["lower"] = p.lower;
  j["upper"] = p.upper;
  j["decomposition"] = {{"beta_term", p.beta_term}, {"factor_term", p.factor_term}};
  return j;
}

inline json to_json(const LassoFit& f) {
  json j;
  j["lambda"] = f.lambda;
  j["coefficients"] = to_json(f.coefficients);
  j["support"] = f.support;
  j["objective"] = f.objective;
  j["iterations"] = f.iterations;
  j["converged"] = f.converged;
  return j;
}

inline json to_json(const MsFasrFit& f) {
  json j;
  j["beta0"] = to_json(f.beta0);
  j["beta1_star"] = to_json(f.beta1_star);
  j["beta1"] = to_json(f.beta1);
  j["lambda_hat"] = to_json(f.lambda_hat);
  j["vhat_T"] = to_json(f.vhat_T);
  j["forecast"] = f.forecast;
  j["intercept"] = f.design.intercept;
  return j;
}

inline json to_json(const PdLassoState& s) {
  json j;
  j["selected"] = s.selected;
  j["tau2"] = to_json(s.tau2);
  j["beta0_debiased"] = to_json(s.beta0_debiased);
  j["beta1"] = to_json(s.beta1);
  j["variance_terms"] = {{"beta0", s.var_beta0}, {"beta1", s.var_beta1}, {"factor", s.var_factor}};
  return j;
}

inline void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace tdi
