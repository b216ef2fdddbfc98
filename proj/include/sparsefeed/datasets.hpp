#pragma once

// Dense dataset ingestion (LIBSVM and CSV), normalization and splitting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsefeed/linalg.hpp"
#include "sparsefeed/objectives.hpp"
#include "sparsefeed/random.hpp"

namespace sparsefeed {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string where(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line) + ": ";
}

inline bool parse_number(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Maps raw numeric labels to class indices. Non-negative integer labels are
/// kept; anything else is remapped to the rank among the distinct labels.
inline std::vector<std::size_t> to_class_indices(const std::vector<double>& raw) {
  bool direct = true;
  for (double v : raw)
    if (v < 0.0 || v != std::floor(v)) direct = false;
  std::vector<std::size_t> out(raw.size());
  if (direct) {
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<std::size_t>(raw[i]);
    return out;
  }
  std::map<double, std::size_t> rank;
  for (double v : raw) rank.emplace(v, 0);
  std::size_t r = 0;
  for (auto& [v, idx] : rank) idx = r++;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = rank[raw[i]];
  return out;
}

inline Dataset assemble(const std::vector<std::vector<double>>& rows, std::size_t cols,
                        const std::vector<double>& raw_labels) {
  Dataset data;
  data.features = Matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].begin(), rows[r].end(), data.features.row(r).begin());
  data.labels = to_class_indices(raw_labels);
  data.classes = infer_classes(data);
  return data;
}

}  // namespace detail

/// LIBSVM/SVMlight text: `label idx:value ...` with 1-based indices. dim = 0
/// infers the feature count from the largest index seen.
inline Dataset load_libsvm(const std::string& path, std::size_t dim = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<std::pair<std::size_t, double>>> sparse;
  std::vector<double> labels;
  std::size_t max_index = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string tok;
    if (!(fields >> tok)) continue;
    double label = 0.0;
    if (!detail::parse_number(tok, label))
      throw DataError(detail::where(path, lineno) + "bad label '" + tok + "'");
    std::vector<std::pair<std::size_t, double>> row;
    while (fields >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw DataError(detail::where(path, lineno) + "expected index:value, got '" + tok + "'");
      std::size_t idx = 0;
      const std::string_view is(tok.data(), colon);
      auto [ptr, ec] = std::from_chars(is.data(), is.data() + is.size(), idx);
      if (ec != std::errc() || ptr != is.data() + is.size() || idx == 0)
        throw DataError(detail::where(path, lineno) + "bad feature index in '" + tok + "'");
      double value = 0.0;
      if (!detail::parse_number(std::string_view(tok).substr(colon + 1), value))
        throw DataError(detail::where(path, lineno) + "bad feature value in '" + tok + "'");
      if (dim && idx > dim)
        throw DataError(detail::where(path, lineno) + "feature index " + std::to_string(idx) +
                        " exceeds d = " + std::to_string(dim));
      max_index = std::max(max_index, idx);
      row.emplace_back(idx - 1, value);
    }
    sparse.push_back(std::move(row));
    labels.push_back(label);
  }
  if (sparse.empty()) throw DataError(path + ": empty dataset");
  const std::size_t cols = dim ? dim : max_index;
  std::vector<std::vector<double>> rows(sparse.size(), std::vector<double>(cols, 0.0));
  for (std::size_t r = 0; r < sparse.size(); ++r)
    for (auto [j, v] : sparse[r]) rows[r][j] = v;
  return detail::assemble(rows, cols, labels);
}

/// Comma-separated numeric rows. label_column < 0 counts from the end. A first
/// line that does not parse as numbers is treated as a header.
inline Dataset load_csv(const std::string& path, long label_column = -1) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> vals;
    bool numeric = true;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const std::string_view cell(line.data() + start,
                                  (comma == std::string::npos ? line.size() : comma) - start);
      double v = 0.0;
      if (!detail::parse_number(cell, v)) numeric = false;
      vals.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!numeric) {
      if (rows.empty() && width == 0) {
        width = vals.size();
        continue;  // header
      }
      throw DataError(detail::where(path, lineno) + "non-numeric field");
    }
    if (width == 0) width = vals.size();
    if (vals.size() != width)
      throw DataError(detail::where(path, lineno) + "expected " + std::to_string(width) +
                      " fields, got " + std::to_string(vals.size()));
    const long w = static_cast<long>(width);
    const long lc = label_column < 0 ? w + label_column : label_column;
    if (lc < 0 || lc >= w)
      throw DataError(detail::where(path, lineno) + "label column out of range");
    labels.push_back(vals[static_cast<std::size_t>(lc)]);
    vals.erase(vals.begin() + lc);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataError(path + ": empty dataset");
  return detail::assemble(rows, width - 1, labels);
}

/// Features then the label in the last column, 17 significant digits.
inline void write_csv(const std::string& path, const Dataset& data) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write " + path);
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.features.row(r)) std::fprintf(f, "%.17g,", v);
    std::fprintf(f, "%zu\n", data.labels[r]);
  }
  if (std::fclose(f) != 0) throw IoError("cannot write " + path);
}

struct FeatureScaling {
  Vec mean;
  Vec sd;
};

/// Per-feature affine map to mean 0.5 and standard deviation 0.5 (population
/// statistics). Constant features map to 0.5.
inline FeatureScaling fit_scaling(const Dataset& data) {
  const std::size_t m = data.feature_dim(), n = data.size();
  FeatureScaling s{Vec(m, 0.0), Vec(m, 0.0)};
  for (std::size_t r = 0; r < n; ++r) axpy(1.0, data.features.row(r), s.mean);
  scale(1.0 / static_cast<double>(n), s.mean);
  for (std::size_t r = 0; r < n; ++r) {
    const auto a = data.features.row(r);
    for (std::size_t j = 0; j < m; ++j) s.sd[j] += (a[j] - s.mean[j]) * (a[j] - s.mean[j]);
  }
  for (double& v : s.sd) v = std::sqrt(v / static_cast<double>(n));
  return s;
}

inline void apply_scaling(const FeatureScaling& s, Dataset& data) {
  for (std::size_t r = 0; r < data.size(); ++r) {
    auto a = data.features.row(r);
    for (std::size_t j = 0; j < a.size(); ++j)
      a[j] = s.sd[j] > 0.0 ? 0.5 + 0.5 * (a[j] - s.mean[j]) / s.sd[j] : 0.5;
  }
}

inline void normalize(Dataset& data) { apply_scaling(fit_scaling(data), data); }

struct Split {
  Dataset train;
  Dataset test;
};

inline Dataset subset_rows(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.features = Matrix(rows.size(), data.feature_dim());
  out.labels.reserve(rows.size());
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const auto src = data.features.row(rows[a]);
    std::copy(src.begin(), src.end(), out.features.row(a).begin());
    out.labels.push_back(data.labels[rows[a]]);
  }
  out.classes = data.classes;
  return out;
}

/// Seeded shuffle, then the first round(train_fraction * n) rows train.
inline Split train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream rng = StreamFactory(seed).stream(1, 0, Channel::data);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 0.5));
  return {subset_rows(data, std::span(order).first(cut)),
          subset_rows(data, std::span(order).subspan(cut))};
}

}  // namespace sparsefeed
