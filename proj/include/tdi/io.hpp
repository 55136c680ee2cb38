// SPDX-License-Identifier: MIT
// CSV ingestion and export.
//
// Series CSV: one row per time index holding vec(X_t) in the canonical order.
// An optional leading comment "# dims: 4x5" (or "4,5") fixes the mode sizes.
// An optional header row of names is skipped; when its first name is t, time
// or timestamp, the first column is read as integer timestamps.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tdi/error.hpp"
#include "tdi/tensor.hpp"

namespace tdi {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) return std::nullopt;
  return v;
}

inline Dims parse_dims(const std::string& text) {
  Dims dims;
  std::string cur;
  for (char c : text + ",") {
    if (c == 'x' || c == 'X' || c == ',' || c == ' ') {
      if (!cur.empty()) {
        try {
          dims.push_back(std::stol(cur));
        } catch (...) {
          throw DataError("cannot parse dims '" + text + "'");
        }
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  check_dims(dims);
  return dims;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::optional<Dims> dims;
};

inline CsvTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty()) continue;
    if (s[0] == '#') {
      const auto pos = s.find("dims:");
      if (pos != std::string::npos) t.dims = parse_dims(s.substr(pos + 5));
      continue;
    }
    auto fields = split_fields(s);
    std::vector<double> row;
    row.reserve(fields.size());
    bool numeric = true;
    for (const auto& f : fields) {
      auto v = parse_double(f);
      if (!v) {
        numeric = false;
        break;
      }
      row.push_back(*v);
    }
    if (!numeric) {
      if (t.rows.empty() && t.header.empty()) {
        t.header = fields;
        width = fields.size();
        continue;
      }
      throw DataError(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (width == 0) width = row.size();
    if (row.size() != width)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) + " fields, found " +
                      std::to_string(row.size()));
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw DataError(path + ": no data rows");
  return t;
}

inline bool is_time_column(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return n == "t" || n == "time" || n == "timestamp";
}

}  // namespace detail

/// Numeric CSV as a matrix (rows as in the file). A header row is skipped.
inline MatrixXd read_matrix_csv(const std::string& path) {
  auto t = detail::read_table(path);
  MatrixXd m(static_cast<Index>(t.rows.size()), static_cast<Index>(t.rows.front().size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = t.rows[i][j];
  if (!m.allFinite()) throw DataError(path + ": non-finite values");
  return m;
}

inline VectorXd read_vector_csv(const std::string& path) {
  MatrixXd m = read_matrix_csv(path);
  if (m.cols() != 1) throw DataError(path + ": expected a single column, found " + std::to_string(m.cols()));
  return m.col(0);
}

inline TensorSeries read_series_csv(const std::string& path, const std::optional<Dims>& dims_override = std::nullopt) {
  auto t = detail::read_table(path);
  const bool timed = !t.header.empty() && detail::is_time_column(t.header.front());
  const std::size_t offset = timed ? 1 : 0;
  const Index d = static_cast<Index>(t.rows.front().size() - offset);
  Dims dims = t.dims ? *t.dims : Dims{d};
  if (dims_override) {
    if (t.dims && *t.dims != *dims_override)
      throw DataError(path + ": file declares dims " + dims_string(*t.dims) + " but " + dims_string(*dims_override) + " was requested");
    dims = *dims_override;
  }
  if (dims_product(dims) != d)
    throw DataError(path + ": rows hold " + std::to_string(d) + " values but dims " + dims_string(dims) + " need " +
                    std::to_string(dims_product(dims)));
  MatrixXd data(d, static_cast<Index>(t.rows.size()));
  std::vector<std::int64_t> ts;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (timed) ts.push_back(static_cast<std::int64_t>(t.rows[i][0]));
    for (Index j = 0; j < d; ++j) data(j, static_cast<Index>(i)) = t.rows[i][static_cast<std::size_t>(j) + offset];
  }
  if (!data.allFinite()) throw DataError(path + ": non-finite values");
  return TensorSeries(dims, std::move(data), std::move(ts));
}

/// Numeric CSV whose optional leading t/time/timestamp column is split off.
struct TimedMatrix {
  MatrixXd values;
  std::vector<std::int64_t> timestamps;  // empty when the file has no time column
};

inline TimedMatrix read_timed_csv(const std::string& path) {
  auto t = detail::read_table(path);
  const bool timed = !t.header.empty() && detail::is_time_column(t.header.front());
  const std::size_t offset = timed ? 1 : 0;
  if (t.rows.front().size() <= offset) throw DataError(path + ": no value columns");
  TimedMatrix out;
  out.values.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(t.rows.front().size() - offset));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (timed) out.timestamps.push_back(static_cast<std::int64_t>(t.rows[i][0]));
    for (std::size_t j = offset; j < t.rows[i].size(); ++j) out.values(static_cast<Index>(i), static_cast<Index>(j - offset)) = t.rows[i][j];
  }
  if (!out.values.allFinite()) throw DataError(path + ": non-finite values");
  return out;
}

/// Requires `what` to cover exactly the periods of the series. With timestamps
/// on both sides they must agree row by row; otherwise only lengths are compared.
inline void check_alignment(const std::string& what, const std::vector<std::int64_t>& ts, Index rows,
                            const std::vector<std::int64_t>& series_ts, Index series_rows) {
  if (!ts.empty() && !series_ts.empty()) {
    const auto offset = ts.front() - series_ts.front();
    if (offset != 0)
      throw DataError(what + " is misaligned with the series: it starts at t=" + std::to_string(ts.front()) +
                      ", the series at t=" + std::to_string(series_ts.front()) + " (offset " + std::to_string(offset) + ")");
    const std::size_t n = std::min(ts.size(), series_ts.size());
    for (std::size_t i = 0; i < n; ++i)
      if (ts[i] != series_ts[i])
        throw DataError(what + " is misaligned with the series at row " + std::to_string(i) + ": t=" + std::to_string(ts[i]) +
                        " vs t=" + std::to_string(series_ts[i]) + " (offset " + std::to_string(ts[i] - series_ts[i]) + ")");
  }
  if (rows != series_rows)
    throw DataError(what + " has " + std::to_string(rows) + " rows but the series has " + std::to_string(series_rows) +
                    " periods (offset " + std::to_string(rows - series_rows) + " at the end)");
}

/// Matrix-valued series from a directory of d1 x d2 CSV files, ordered by file name.
inline TensorSeries read_series_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError(dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError(dir + ": no .csv slices");
  std::vector<Tensor> slices;
  for (const auto& f : files) {
    MatrixXd m = read_matrix_csv(f.string());
    if (!slices.empty() && (m.rows() != slices.front().dims()[0] || m.cols() != slices.front().dims()[1]))
      throw DataError(f.string() + ": slice is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
                      dims_string(slices.front().dims()));
    slices.emplace_back(Dims{m.rows(), m.cols()}, Eigen::Map<const VectorXd>(m.data(), m.size()));
  }
  return TensorSeries::from_tensors(slices);
}

inline void write_matrix_csv(const MatrixXd& m, const std::string& path, const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.precision(17);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  if (!header.empty()) out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

inline void write_series_csv(const TensorSeries& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.precision(17);
  out << "# dims: " << dims_string(s.dims()) << '\n';
  const MatrixXd& x = s.matrix();
  for (Index t = 0; t < x.cols(); ++t) {
    for (Index j = 0; j < x.rows(); ++j) out << (j ? "," : "") << x(j, t);
    out << '\n';
  }
}

}  // namespace tdi
