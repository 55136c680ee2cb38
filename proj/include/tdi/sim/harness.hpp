// SPDX-License-Identifier: MIT
// Monte Carlo runner: cells x replications on a small thread pool, plus reports.
#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tdi/error.hpp"

namespace tdi::sim {

using json = nlohmann::ordered_json;

inline constexpr double nan = std::numeric_limits<double>::quiet_NaN();

/// One grid point. `run` receives the replication seed and returns one value per metric.
struct Cell {
  json labels;  // object of parameter name -> value
  std::function<std::vector<double>(std::uint64_t)> run;
};

struct ExperimentSpec {
  std::string name;
  json config;                        // resolved configuration, echoed in summary.json
  std::vector<std::string> metrics;
  std::vector<Cell> cells;
  /// Columns of plot_<name>.csv: "mean:<metric>", "std:<metric>" or "label:<key>".
  std::vector<std::string> plot_columns;
  /// Extra experiment-level statistics computed from the per-cell summaries.
  std::function<json(const json& cells)> extra;
};

struct RepRow {
  std::size_t cell = 0;
  long rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<double> values;
};

struct ExperimentReport {
  std::string name;
  json config;
  std::vector<std::string> metrics;
  std::vector<json> labels;
  std::vector<RepRow> rows;  // ordered by (cell, rep)
  json summary;              // deterministic content only
  double wall_seconds = 0.0;
  long failures = 0;
};

struct RunOptions {
  long replications = 100;
  std::uint64_t seed = 20240601;
  int threads = 1;
  double max_failure_rate = 0.10;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Replication i (counted across cells, cell-major) uses master XOR i; the
/// generator passes it through splitmix64 before seeding.
inline std::uint64_t replication_seed(std::uint64_t master, std::size_t index) {
  return master ^ static_cast<std::uint64_t>(index);
}

// ---- summary statistics (NaN entries are skipped) ----

inline std::vector<double> finite_values(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v)
    if (std::isfinite(x)) out.push_back(x);
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return nan;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return nan;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Linear-interpolation quantile on a sorted sample.
inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return nan;
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct LineFit {
  double intercept = nan;
  double slope = nan;
  double r2 = nan;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  LineFit f;
  if (x.size() != y.size() || x.size() < 2) return f;
  const double mx = mean_of(x), my = mean_of(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

/// JSON cannot hold NaN; missing statistics become null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json summarize_metric(const std::vector<double>& raw) {
  std::vector<double> v = finite_values(raw);
  std::sort(v.begin(), v.end());
  json j;
  j["n"] = v.size();
  j["mean"] = num(mean_of(v));
  j["std"] = num(sd_of(v));
  j["se"] = num(v.size() > 1 ? sd_of(v) / std::sqrt(static_cast<double>(v.size())) : nan);
  j["q05"] = num(quantile_sorted(v, 0.05));
  j["q25"] = num(quantile_sorted(v, 0.25));
  j["median"] = num(quantile_sorted(v, 0.5));
  j["q75"] = num(quantile_sorted(v, 0.75));
  j["q95"] = num(quantile_sorted(v, 0.95));
  return j;
}

/// Reads summary["cells"][i]["metrics"][m][stat] as a double (NaN when null).
inline double cell_stat(const json& cell, const std::string& metric, const std::string& stat = "mean") {
  const json& v = cell.at("metrics").at(metric).at(stat);
  return v.is_number() ? v.get<double>() : nan;
}

inline ExperimentReport run_experiment(const ExperimentSpec& spec, const RunOptions& opt) {
  if (opt.replications < 1) throw InvalidArgument("replications must be >= 1");
  if (opt.threads < 1) throw InvalidArgument("threads must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.name = spec.name;
  rep.config = spec.config;
  rep.metrics = spec.metrics;
  for (const auto& c : spec.cells) rep.labels.push_back(c.labels);
  const std::size_t total = spec.cells.size() * static_cast<std::size_t>(opt.replications);
  rep.rows.resize(total);

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= total) return;
      RepRow& row = rep.rows[task];
      row.cell = task / static_cast<std::size_t>(opt.replications);
      row.rep = static_cast<long>(task % static_cast<std::size_t>(opt.replications));
      row.seed = replication_seed(opt.seed, task);
      try {
        row.values = spec.cells[row.cell].run(row.seed);
        if (row.values.size() != spec.metrics.size())
          throw NumericalError("replication returned " + std::to_string(row.values.size()) + " metrics, expected " +
                               std::to_string(spec.metrics.size()));
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
        row.values.assign(spec.metrics.size(), nan);
      }
      const std::size_t d = done.fetch_add(1) + 1;
      if (opt.progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        opt.progress(d, total);
      }
    }
  };
  const int nthreads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(opt.threads), std::max<std::size_t>(total, 1)));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  json cells = json::array();
  for (std::size_t c = 0; c < spec.cells.size(); ++c) {
    json cj;
    cj["labels"] = spec.cells[c].labels;
    long fails = 0;
    std::vector<std::vector<double>> cols(spec.metrics.size());
    for (long r = 0; r < opt.replications; ++r) {
      const RepRow& row = rep.rows[c * static_cast<std::size_t>(opt.replications) + static_cast<std::size_t>(r)];
      if (!row.ok) {
        ++fails;
        continue;
      }
      for (std::size_t m = 0; m < cols.size(); ++m) cols[m].push_back(row.values[m]);
    }
    rep.failures += fails;
    cj["replications"] = opt.replications;
    cj["failures"] = fails;
    json ms;
    for (std::size_t m = 0; m < cols.size(); ++m) ms[spec.metrics[m]] = summarize_metric(cols[m]);
    cj["metrics"] = ms;
    cells.push_back(std::move(cj));
  }
  rep.summary["schema_version"] = 1;
  rep.summary["experiment"] = spec.name;
  rep.summary["replications"] = opt.replications;
  rep.summary["seed"] = opt.seed;
  rep.summary["config"] = spec.config;
  rep.summary["failures"] = rep.failures;
  rep.summary["cells"] = cells;
  if (spec.extra) rep.summary["derived"] = spec.extra(cells);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const double rate = static_cast<double>(rep.failures) / static_cast<double>(total);
  if (rate > opt.max_failure_rate) {
    std::string first;
    for (const auto& r : rep.rows)
      if (!r.ok) {
        first = r.error;
        break;
      }
    throw NumericalError("experiment " + spec.name + ": " + std::to_string(rep.failures) + " of " + std::to_string(total) +
                         " replications failed (first error: " + first + ")");
  }
  return rep;
}

namespace detail {

/// Shortest text that reads back to the same double.
inline std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string label_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return shortest(v.get<double>());
}

inline void write_value(std::ostream& out, double v) {
  if (std::isfinite(v))
    out << shortest(v);
  else
    out << "NA";
}

}  // namespace detail

/// Writes metrics.csv, summary.json and plot_<name>.csv into `dir`.
inline void write_report(const ExperimentReport& rep, const ExperimentSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());

  std::vector<std::string> label_keys;
  if (!rep.labels.empty())
    for (auto it = rep.labels.front().begin(); it != rep.labels.front().end(); ++it) label_keys.push_back(it.key());

  {
    std::ofstream out(fs::path(dir) / "metrics.csv");
    if (!out) throw DataError("cannot write metrics.csv in " + dir);
    out.precision(17);
    out << "cell";
    for (const auto& k : label_keys) out << ',' << k;
    out << ",rep,seed,status";
    for (const auto& m : rep.metrics) out << ',' << m;
    out << ",error\n";
    for (const auto& r : rep.rows) {
      out << r.cell;
      for (const auto& k : label_keys) out << ',' << detail::label_value(rep.labels[r.cell].at(k));
      out << ',' << r.rep << ',' << r.seed << ',' << (r.ok ? "ok" : "failed");
      for (double v : r.values) {
        out << ',';
        detail::write_value(out, v);
      }
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << ',' << msg << '\n';
    }
  }
  {
    std::ofstream out(fs::path(dir) / "summary.json");
    if (!out) throw DataError("cannot write summary.json in " + dir);
    out << rep.summary.dump(2) << '\n';
  }
  {
    std::ofstream out(fs::path(dir) / ("plot_" + rep.name + ".csv"));
    if (!out) throw DataError("cannot write plot file in " + dir);
    out.precision(17);
    for (std::size_t i = 0; i < spec.plot_columns.size(); ++i) {
      std::string c = spec.plot_columns[i];
      const auto pos = c.find(':');
      const std::string kind = c.substr(0, pos);
      const std::string key = c.substr(pos + 1);
      out << (i ? "," : "") << (kind == "label" ? key : kind + "_" + key);
    }
    out << '\n';
    const json& cells = rep.summary.at("cells");
    for (const auto& cell : cells) {
      for (std::size_t i = 0; i < spec.plot_columns.size(); ++i) {
        const std::string& c = spec.plot_columns[i];
        const auto pos = c.find(':');
        const std::string kind = c.substr(0, pos);
        const std::string key = c.substr(pos + 1);
        if (i) out << ',';
        if (kind == "label")
          out << detail::label_value(cell.at("labels").at(key));
        else
          detail::write_value(out, cell_stat(cell, key, kind));
      }
      out << '\n';
    }
  }
}

}  // namespace tdi::sim
