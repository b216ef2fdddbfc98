#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace sparsefeed {

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double out = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) out += a[j] * b[j];
  return out;
}

inline double norm_sq(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(norm_sq(a)); }

inline double distance_sq(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double out = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    out += diff * diff;
  }
  return out;
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t j = 0; j < x.size(); ++j) y[j] += a * x[j];
}

inline void scale(double a, std::span<double> x) {
  for (double& v : x) v *= a;
}

inline Vec zeros(std::size_t d) { return Vec(d, 0.0); }

inline Vec subtract(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  Vec out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] - b[j];
  return out;
}

/// Arithmetic mean of equally sized vectors, accumulated in index order.
inline Vec mean_of(const std::vector<Vec>& vs) {
  if (vs.empty()) throw std::invalid_argument("mean_of: empty input");
  Vec out(vs.front().size(), 0.0);
  for (const Vec& v : vs) axpy(1.0, v, out);
  scale(1.0 / static_cast<double>(vs.size()), out);
  return out;
}

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace sparsefeed
