#pragma once

// Trace serialization: metrics CSV and whitespace-delimited plot series.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sparsefeed/datasets.hpp"
#include "sparsefeed/trace.hpp"

namespace sparsefeed {

inline constexpr const char* kMetricsHeader =
    "iter,loss,grad_norm_sq,mem_norm_sq,comm_raw_cum,comm_capped_cum";

namespace detail {

class File {
 public:
  explicit File(const std::string& path) : path_(path), f_(std::fopen(path.c_str(), "w")) {
    if (!f_) throw IoError("cannot write " + path);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
  ~File() {
    if (f_) std::fclose(f_);
  }
  std::FILE* get() { return f_; }
  void close() {
    const int rc = std::fclose(f_);
    f_ = nullptr;
    if (rc != 0) throw IoError("cannot write " + path_);
  }

 private:
  std::string path_;
  std::FILE* f_;
};

}  // namespace detail

/// Path of the per-record extra metrics written next to a metrics file.
inline std::string eval_path_for(const std::string& metrics_path) {
  std::filesystem::path p(metrics_path);
  p.replace_extension(".eval.csv");
  return p.string();
}

/// One row per logged round, 17 significant digits. Extra metrics, when the
/// trace has any, go to eval_path_for(path).
inline void write_metrics(const Trace& trace, const std::string& path) {
  detail::File f(path);
  std::fprintf(f.get(), "%s\n", kMetricsHeader);
  for (const RoundRecord& r : trace.records)
    std::fprintf(f.get(), "%zu,%.17g,%.17g,%.17g,%zu,%zu\n", r.t, r.loss, r.grad_norm_sq,
                 r.mem_norm_sq, r.comm_raw_cum, r.comm_capped_cum);
  f.close();
  if (trace.extra_names.empty()) return;
  detail::File e(eval_path_for(path));
  std::fprintf(e.get(), "iter");
  for (const auto& n : trace.extra_names) std::fprintf(e.get(), ",%s", n.c_str());
  std::fprintf(e.get(), "\n");
  for (const RoundRecord& r : trace.records) {
    std::fprintf(e.get(), "%zu", r.t);
    for (double v : r.extra) std::fprintf(e.get(), ",%.17g", v);
    std::fprintf(e.get(), "\n");
  }
  e.close();
}

/// Value of a named metric in a record; extras are looked up by name.
inline double metric_value(const Trace& trace, const RoundRecord& r, const std::string& metric) {
  if (metric == "loss") return r.loss;
  if (metric == "grad_norm_sq") return r.grad_norm_sq;
  if (metric == "mem_norm_sq") return r.mem_norm_sq;
  if (metric == "comm_raw_cum") return static_cast<double>(r.comm_raw_cum);
  if (metric == "comm_capped_cum") return static_cast<double>(r.comm_capped_cum);
  for (std::size_t a = 0; a < trace.extra_names.size(); ++a)
    if (trace.extra_names[a] == metric && a < r.extra.size()) return r.extra[a];
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

struct PlotRow {
  std::size_t iter = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation across runs
};

/// Mean and sample standard deviation across runs on the coarsest logging
/// grid among them. A run without a record at a grid point contributes its
/// latest earlier record.
inline std::vector<PlotRow> plot_series(const std::vector<Trace>& runs, const std::string& metric) {
  if (runs.empty()) throw std::invalid_argument("plot_series: no runs");
  const Trace* grid = &runs.front();
  for (const Trace& t : runs)
    if (t.records.size() < grid->records.size()) grid = &t;
  std::vector<PlotRow> rows;
  rows.reserve(grid->records.size());
  const double n = static_cast<double>(runs.size());
  for (const RoundRecord& g : grid->records) {
    std::vector<double> vals;
    vals.reserve(runs.size());
    for (const Trace& t : runs) {
      auto it = std::upper_bound(t.records.begin(), t.records.end(), g.t,
                                 [](std::size_t v, const RoundRecord& r) { return v < r.t; });
      if (it == t.records.begin()) throw std::invalid_argument("plot_series: run starts late");
      vals.push_back(metric_value(t, *std::prev(it), metric));
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    rows.push_back({g.t, mean, runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0});
  }
  return rows;
}

/// Writes <dir>/<series>.<metric>.dat with columns `iter mean std`.
inline std::string emit_plot_data(const std::string& dir, const std::string& series,
                                  const std::string& metric, const std::vector<Trace>& runs) {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / (series + "." + metric + ".dat")).string();
  detail::File f(path);
  std::fprintf(f.get(), "# iter mean std\n");
  for (const PlotRow& r : plot_series(runs, metric))
    std::fprintf(f.get(), "%zu %.17g %.17g\n", r.iter, r.mean, r.sd);
  f.close();
  return path;
}

}  // namespace sparsefeed
