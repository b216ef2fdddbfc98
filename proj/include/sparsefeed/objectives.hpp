#pragma once

// Finite-sum objectives F(x) = (1/P) sum_p (1/n_p) sum_i f_{i,p}(x), with the
// sample set partitioned across P simulated workers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparsefeed/linalg.hpp"
#include "sparsefeed/random.hpp"

namespace sparsefeed {

/// Oracle interface implemented by every concrete objective.
///
/// Implementations are immutable after construction, so every method may be
/// called concurrently.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t workers() const = 0;
  virtual std::size_t samples(std::size_t p) const = 0;

  virtual double sample_value(std::size_t p, std::size_t i,
                              std::span<const double> x) const = 0;
  virtual void sample_grad(std::size_t p, std::size_t i, std::span<const double> x,
                           std::span<double> out) const = 0;

  /// Mean of the sample gradients held by worker p.
  virtual void partition_grad(std::size_t p, std::span<const double> x,
                              std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    Vec tmp(dim());
    const std::size_t n = samples(p);
    for (std::size_t i = 0; i < n; ++i) {
      sample_grad(p, i, x, tmp);
      axpy(1.0, tmp, out);
    }
    scale(1.0 / static_cast<double>(n), out);
  }

  virtual double partition_value(std::size_t p, std::span<const double> x) const {
    double acc = 0.0;
    const std::size_t n = samples(p);
    for (std::size_t i = 0; i < n; ++i) acc += sample_value(p, i, x);
    return acc / static_cast<double>(n);
  }

  virtual double value(std::span<const double> x) const {
    double acc = 0.0;
    for (std::size_t p = 0; p < workers(); ++p) acc += partition_value(p, x);
    return acc / static_cast<double>(workers());
  }

  /// F(x) - F(x*) evaluated without cancellation, when the objective knows how.
  virtual std::optional<double> gap(std::span<const double> /*x*/) const {
    return std::nullopt;
  }
};

struct Optimum {
  Vec x;
  double value = 0.0;
};

/// A partitioned objective together with the constants the schedules and
/// diagnostics consume. Cheap to copy; the oracle is shared.
class Problem {
 public:
  Problem(std::shared_ptr<const Objective> objective, double L, double mu,
          std::optional<Optimum> optimum, std::string name)
      : objective_(std::move(objective)),
        L_(L),
        mu_(mu),
        optimum_(std::move(optimum)),
        name_(std::move(name)) {
    if (!objective_) throw std::invalid_argument("Problem: null objective");
  }

  std::size_t dim() const { return objective_->dim(); }
  std::size_t workers() const { return objective_->workers(); }
  std::size_t samples(std::size_t p) const { return objective_->samples(p); }
  std::size_t n_per_worker() const { return objective_->samples(0); }
  std::size_t total_samples() const {
    std::size_t n = 0;
    for (std::size_t p = 0; p < workers(); ++p) n += samples(p);
    return n;
  }

  double L() const { return L_; }
  double mu() const { return mu_; }
  const std::optional<Optimum>& optimum() const { return optimum_; }
  const std::string& name() const { return name_; }
  const std::shared_ptr<const Objective>& objective() const { return objective_; }

  double value(std::span<const double> x) const { return objective_->value(x); }

  double sample_value(std::size_t p, std::size_t i, std::span<const double> x) const {
    return objective_->sample_value(p, i, x);
  }

  void sample_grad_into(std::size_t p, std::size_t i, std::span<const double> x,
                        std::span<double> out) const {
    objective_->sample_grad(p, i, x, out);
  }
  Vec sample_grad(std::size_t p, std::size_t i, std::span<const double> x) const {
    Vec out(dim());
    sample_grad_into(p, i, x, out);
    return out;
  }

  void partition_grad_into(std::size_t p, std::span<const double> x,
                           std::span<double> out) const {
    objective_->partition_grad(p, x, out);
  }

  // The worker-ordered sum below is the same reduction the round functions
  // use, which is what lets full-batch runs match deterministic NAG bitwise.
  void full_grad_into(std::span<const double> x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    Vec tmp(dim());
    for (std::size_t p = 0; p < workers(); ++p) {
      partition_grad_into(p, x, tmp);
      axpy(1.0, tmp, out);
    }
    scale(1.0 / static_cast<double>(workers()), out);
  }
  Vec full_grad(std::span<const double> x) const {
    Vec out(dim());
    full_grad_into(x, out);
    return out;
  }

  /// F(x) - F(x*). Requires a known optimum.
  double suboptimality(std::span<const double> x) const {
    if (auto g = objective_->gap(x)) return *g;
    if (!optimum_) throw std::logic_error("suboptimality: optimum unknown for " + name_);
    return value(x) - optimum_->value;
  }

 private:
  std::shared_ptr<const Objective> objective_;
  double L_;
  double mu_;
  std::optional<Optimum> optimum_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Quadratic: f_{i,p}(x) = 1/2 (x - b_{i,p})^T A (x - b_{i,p}), A diagonal.

class QuadraticObjective final : public Objective {
 public:
  /// centers are indexed by global sample id s = p * n_per_worker + i.
  QuadraticObjective(Vec diag, std::vector<Vec> centers, std::size_t P)
      : diag_(std::move(diag)), centers_(std::move(centers)), P_(P) {
    if (P_ == 0 || centers_.empty() || centers_.size() % P_ != 0)
      throw std::invalid_argument("QuadraticObjective: centers must split evenly over P");
    n_ = centers_.size() / P_;
    const std::size_t d = diag_.size();
    for (const Vec& b : centers_)
      if (b.size() != d) throw std::invalid_argument("QuadraticObjective: center size");
    partition_means_.assign(P_, Vec(d, 0.0));
    for (std::size_t p = 0; p < P_; ++p) {
      for (std::size_t i = 0; i < n_; ++i) axpy(1.0, centers_[p * n_ + i], partition_means_[p]);
      scale(1.0 / static_cast<double>(n_), partition_means_[p]);
    }
    mean_ = mean_of(partition_means_);
    double acc = 0.0;
    for (const Vec& b : centers_) acc += weighted_sq(b, mean_);
    f_star_ = 0.5 * acc / static_cast<double>(centers_.size());
  }

  std::size_t dim() const override { return diag_.size(); }
  std::size_t workers() const override { return P_; }
  std::size_t samples(std::size_t) const override { return n_; }

  double sample_value(std::size_t p, std::size_t i, std::span<const double> x) const override {
    return 0.5 * weighted_sq(x, centers_[p * n_ + i]);
  }

  void sample_grad(std::size_t p, std::size_t i, std::span<const double> x,
                   std::span<double> out) const override {
    const Vec& b = centers_[p * n_ + i];
    for (std::size_t j = 0; j < diag_.size(); ++j) out[j] = diag_[j] * (x[j] - b[j]);
  }

  void partition_grad(std::size_t p, std::span<const double> x,
                      std::span<double> out) const override {
    const Vec& b = partition_means_[p];
    for (std::size_t j = 0; j < diag_.size(); ++j) out[j] = diag_[j] * (x[j] - b[j]);
  }

  double value(std::span<const double> x) const override {
    return f_star_ + 0.5 * weighted_sq(x, mean_);
  }

  std::optional<double> gap(std::span<const double> x) const override {
    return 0.5 * weighted_sq(x, mean_);
  }

  const Vec& diag() const { return diag_; }
  const Vec& minimizer() const { return mean_; }
  double min_value() const { return f_star_; }

 private:
  double weighted_sq(std::span<const double> x, std::span<const double> b) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < diag_.size(); ++j) {
      const double r = x[j] - b[j];
      acc += diag_[j] * r * r;
    }
    return acc;
  }

  Vec diag_;
  std::vector<Vec> centers_;
  std::vector<Vec> partition_means_;
  Vec mean_;
  double f_star_ = 0.0;
  std::size_t P_ = 0;
  std::size_t n_ = 0;
};

/// Builds a quadratic from explicit curvature and centers.
inline Problem make_quadratic_from(Vec diag, std::vector<Vec> centers, std::size_t P) {
  if (diag.empty()) throw std::invalid_argument("make_quadratic: d must be >= 1");
  for (double a : diag)
    if (!(a > 0.0)) throw std::invalid_argument("make_quadratic: curvature must be positive");
  const double L = *std::max_element(diag.begin(), diag.end());
  const double mu = *std::min_element(diag.begin(), diag.end());
  auto obj = std::make_shared<QuadraticObjective>(std::move(diag), std::move(centers), P);
  Optimum opt{obj->minimizer(), obj->min_value()};
  return Problem(obj, L, mu, std::move(opt), "quadratic");
}

/// Synthetic strongly convex quadratic with exactly known L, mu and optimum.
///
/// Eigenvalues are log-uniform in [mu, L]; the smallest and largest draws are
/// then pinned to mu and L. Centers are standard normal times noise_scale, drawn
/// in global sample order, so (P, n) and (1, P*n) with the same seed describe the
/// same finite sum.
inline Problem make_quadratic(std::size_t d, double L, double mu, std::size_t n_per_worker,
                              std::size_t P, std::uint64_t seed, double noise_scale = 1.0) {
  if (d == 0) throw std::invalid_argument("make_quadratic: d must be >= 1");
  if (!(mu > 0.0)) throw std::invalid_argument("make_quadratic: mu must be > 0");
  if (mu > L) throw std::invalid_argument("make_quadratic: mu must be <= L");
  if (P == 0 || n_per_worker == 0)
    throw std::invalid_argument("make_quadratic: P and n_per_worker must be >= 1");
  if (d == 1 && mu != L)
    throw std::invalid_argument("make_quadratic: d = 1 requires mu == L");

  StreamFactory streams(seed);
  Stream eig = streams.stream(0, 0, Channel::data);
  Vec diag(d);
  const double lo = std::log(mu), hi = std::log(L);
  for (double& a : diag) a = std::exp(lo + (hi - lo) * eig.uniform01());
  if (d == 1) {
    diag[0] = L;
  } else {
    auto [mn, mx] = std::minmax_element(diag.begin(), diag.end());
    std::size_t imin = static_cast<std::size_t>(mn - diag.begin());
    std::size_t imax = static_cast<std::size_t>(mx - diag.begin());
    if (imin == imax) imax = (imin + 1) % d;
    diag[imin] = mu;
    diag[imax] = L;
  }

  Stream noise = streams.stream(0, 1, Channel::data);
  std::vector<Vec> centers(P * n_per_worker, Vec(d, 0.0));
  for (Vec& b : centers)
    for (double& v : b) v = noise_scale * noise.normal();
  return make_quadratic_from(std::move(diag), std::move(centers), P);
}

// ---------------------------------------------------------------------------
// Datasets and worker partitions.

struct Dataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }
};

/// Seeded global shuffle followed by contiguous blocks whose sizes differ by at
/// most one.
inline std::vector<std::vector<std::size_t>> partition_rows(std::size_t n, std::size_t P,
                                                            std::uint64_t seed) {
  if (P == 0) throw std::invalid_argument("partition_rows: P must be >= 1");
  if (n < P) throw std::invalid_argument("partition_rows: fewer rows than workers");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream rng = StreamFactory(seed).stream(0, 2, Channel::data);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  std::vector<std::vector<std::size_t>> parts(P);
  const std::size_t base = n / P, extra = n % P;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t len = base + (p < extra ? 1 : 0);
    parts[p].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return parts;
}

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression with (l2/2)||x||^2, x = flattened C x m.

class LogRegObjective final : public Objective {
 public:
  LogRegObjective(std::shared_ptr<const Dataset> data, double l2,
                  std::vector<std::vector<std::size_t>> parts)
      : data_(std::move(data)), l2_(l2), parts_(std::move(parts)) {
    classes_ = data_->classes;
    m_ = data_->feature_dim();
  }

  std::size_t dim() const override { return classes_ * m_; }
  std::size_t workers() const override { return parts_.size(); }
  std::size_t samples(std::size_t p) const override { return parts_[p].size(); }
  std::size_t classes() const { return classes_; }
  const std::vector<std::vector<std::size_t>>& partitions() const { return parts_; }

  double sample_value(std::size_t p, std::size_t i, std::span<const double> x) const override {
    return row_loss(parts_[p][i], x) + 0.5 * l2_ * norm_sq(x);
  }

  void sample_grad(std::size_t p, std::size_t i, std::span<const double> x,
                   std::span<double> out) const override {
    const std::size_t r = parts_[p][i];
    Vec prob = scores(r, x);
    const double lse = log_sum_exp(prob);
    for (double& v : prob) v = std::exp(v - lse);
    prob[data_->labels[r]] -= 1.0;
    const auto a = data_->features.row(r);
    for (std::size_t c = 0; c < classes_; ++c)
      for (std::size_t j = 0; j < m_; ++j)
        out[c * m_ + j] = prob[c] * a[j] + l2_ * x[c * m_ + j];
  }

  double row_loss(std::size_t r, std::span<const double> x) const {
    const Vec z = scores(r, x);
    return log_sum_exp(z) - z[data_->labels[r]];
  }

  Vec scores(std::size_t r, std::span<const double> x) const {
    const auto a = data_->features.row(r);
    Vec z(classes_, 0.0);
    for (std::size_t c = 0; c < classes_; ++c) z[c] = dot(x.subspan(c * m_, m_), a);
    return z;
  }

 private:
  std::shared_ptr<const Dataset> data_;
  double l2_;
  std::vector<std::vector<std::size_t>> parts_;
  std::size_t classes_ = 0;
  std::size_t m_ = 0;
};

inline std::size_t infer_classes(const Dataset& data) {
  std::size_t c = data.classes;
  for (std::size_t y : data.labels) c = std::max(c, y + 1);
  return c;
}

/// L2-regularized multinomial logistic regression over a dataset.
///
/// L is the bound max_i ||a_i||^2 / 2 + l2 (the softmax Hessian has spectral
/// norm at most 1/2); mu = l2.
inline Problem make_logreg(const Dataset& data, double l2, std::size_t P,
                           std::uint64_t seed = 0) {
  if (data.size() == 0) throw std::invalid_argument("make_logreg: empty dataset");
  if (data.labels.size() != data.size())
    throw std::invalid_argument("make_logreg: label count does not match rows");
  if (!(l2 >= 0.0)) throw std::invalid_argument("make_logreg: l2 must be >= 0");
  if (data.size() < P) throw std::invalid_argument("make_logreg: need n >= P");
  auto owned = std::make_shared<Dataset>(data);
  if (owned->classes == 0) owned->classes = infer_classes(data);
  for (std::size_t y : owned->labels)
    if (y >= owned->classes) throw std::invalid_argument("make_logreg: label out of range");
  if (owned->classes < 2) owned->classes = 2;
  double max_row = 0.0;
  for (std::size_t r = 0; r < owned->size(); ++r)
    max_row = std::max(max_row, norm_sq(owned->features.row(r)));
  auto obj = std::make_shared<LogRegObjective>(owned, l2, partition_rows(data.size(), P, seed));
  return Problem(obj, max_row / 2.0 + l2, l2, std::nullopt, "logreg");
}

/// Mean cross-entropy (no regularizer) of weights x on a dataset.
inline double logreg_data_loss(std::span<const double> x, const Dataset& data) {
  const std::size_t C = x.size() / data.feature_dim();
  const std::size_t m = data.feature_dim();
  double acc = 0.0;
  Vec z(C);
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t c = 0; c < C; ++c) z[c] = dot(x.subspan(c * m, m), data.features.row(r));
    acc += log_sum_exp(z) - z[data.labels[r]];
  }
  return data.size() ? acc / static_cast<double>(data.size()) : 0.0;
}

/// Argmax-class accuracy; ties resolve to the lowest class index.
inline double logreg_accuracy(std::span<const double> x, const Dataset& data) {
  const std::size_t m = data.feature_dim();
  const std::size_t C = x.size() / m;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      const double s = dot(x.subspan(c * m, m), data.features.row(r));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    if (best == data.labels[r]) ++hits;
  }
  return data.size() ? static_cast<double>(hits) / static_cast<double>(data.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// Nonconvex test objective: binary logistic loss plus r(x) = sum_j x_j^2/(1+x_j^2).

inline double nonconvex_penalty(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v / (1.0 + v * v);
  return acc;
}

inline double nonconvex_penalty_grad(double v) {
  const double q = 1.0 + v * v;
  return 2.0 * v / (q * q);
}

inline double nonconvex_penalty_curvature(double v) {
  const double q = 1.0 + v * v;
  return (2.0 - 6.0 * v * v) / (q * q * q);
}

class NonconvexObjective final : public Objective {
 public:
  NonconvexObjective(Matrix features, Vec signs, std::size_t P)
      : features_(std::move(features)), signs_(std::move(signs)), P_(P) {
    n_ = features_.rows() / P_;
  }

  std::size_t dim() const override { return features_.cols(); }
  std::size_t workers() const override { return P_; }
  std::size_t samples(std::size_t) const override { return n_; }

  double sample_value(std::size_t p, std::size_t i, std::span<const double> x) const override {
    const std::size_t r = p * n_ + i;
    const double margin = signs_[r] * dot(features_.row(r), x);
    return softplus(-margin) + nonconvex_penalty(x);
  }

  void sample_grad(std::size_t p, std::size_t i, std::span<const double> x,
                   std::span<double> out) const override {
    const std::size_t r = p * n_ + i;
    const auto a = features_.row(r);
    const double margin = signs_[r] * dot(a, x);
    const double w = -signs_[r] * sigmoid(-margin);
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = w * a[j] + nonconvex_penalty_grad(x[j]);
  }

  const Matrix& features() const { return features_; }

 private:
  static double softplus(double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  static double sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  }

  Matrix features_;
  Vec signs_;
  std::size_t P_;
  std::size_t n_;
};

/// Smooth, bounded-below nonconvex objective with mu = 0 and
/// L = max_i ||a_i||^2 / 4 + 2.
///
/// Features are N(0, I/d); labels follow a random linear teacher with 10% of
/// them flipped so the data are not separable.
inline Problem make_nonconvex(std::size_t d, std::size_t n_per_worker, std::size_t P,
                              std::uint64_t seed) {
  if (d == 0) throw std::invalid_argument("make_nonconvex: d must be >= 1");
  if (P == 0 || n_per_worker == 0)
    throw std::invalid_argument("make_nonconvex: P and n_per_worker must be >= 1");
  StreamFactory streams(seed);
  Stream rng = streams.stream(0, 3, Channel::data);
  Vec teacher(d);
  for (double& v : teacher) v = rng.normal();
  const std::size_t n = n_per_worker * P;
  Matrix features(n, d);
  Vec signs(n);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  double max_row = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto a = features.row(r);
    for (double& v : a) v = s * rng.normal();
    double y = dot(a, teacher) >= 0.0 ? 1.0 : -1.0;
    if (rng.uniform01() < 0.1) y = -y;
    signs[r] = y;
    max_row = std::max(max_row, norm_sq(a));
  }
  auto obj = std::make_shared<NonconvexObjective>(std::move(features), std::move(signs), P);
  return Problem(obj, max_row / 4.0 + 2.0, 0.0, std::nullopt, "nonconvex");
}

// ---------------------------------------------------------------------------
// F + sigma * ||x - center||^2 (no 1/2 factor).

class RegularizedObjective final : public Objective {
 public:
  RegularizedObjective(std::shared_ptr<const Objective> base, double sigma, Vec center)
      : base_(std::move(base)), sigma_(sigma), center_(std::move(center)) {}

  std::size_t dim() const override { return base_->dim(); }
  std::size_t workers() const override { return base_->workers(); }
  std::size_t samples(std::size_t p) const override { return base_->samples(p); }

  double sample_value(std::size_t p, std::size_t i, std::span<const double> x) const override {
    return base_->sample_value(p, i, x) + penalty(x);
  }
  void sample_grad(std::size_t p, std::size_t i, std::span<const double> x,
                   std::span<double> out) const override {
    base_->sample_grad(p, i, x, out);
    add_penalty_grad(x, out);
  }
  void partition_grad(std::size_t p, std::span<const double> x,
                      std::span<double> out) const override {
    base_->partition_grad(p, x, out);
    add_penalty_grad(x, out);
  }
  double partition_value(std::size_t p, std::span<const double> x) const override {
    return base_->partition_value(p, x) + penalty(x);
  }
  double value(std::span<const double> x) const override { return base_->value(x) + penalty(x); }

 private:
  double penalty(std::span<const double> x) const { return sigma_ * distance_sq(x, center_); }
  void add_penalty_grad(std::span<const double> x, std::span<double> out) const {
    const double two_sigma = 2.0 * sigma_;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += two_sigma * (x[j] - center_[j]);
  }

  std::shared_ptr<const Objective> base_;
  double sigma_;
  Vec center_;
};

/// Returns F + sigma * ||x - center||^2 with L' = L + 2 sigma and
/// mu' = max(mu, 2 sigma - L).
inline Problem regularize(const Problem& problem, double sigma, std::span<const double> center) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("regularize: sigma must be >= 0");
  if (center.size() != problem.dim())
    throw std::invalid_argument("regularize: center dimension mismatch");
  auto obj = std::make_shared<RegularizedObjective>(problem.objective(), sigma,
                                                    Vec(center.begin(), center.end()));
  std::optional<Optimum> opt;
  if (sigma == 0.0) opt = problem.optimum();
  return Problem(obj, problem.L() + 2.0 * sigma, std::max(problem.mu(), 2.0 * sigma - problem.L()),
                 std::move(opt), problem.name() + "+reg");
}

// ---------------------------------------------------------------------------

/// Uniform draw from worker p's partition.
inline std::size_t sample_index(const Problem& problem, std::size_t p, Stream& rng) {
  if (p >= problem.workers()) throw std::out_of_range("sample_index: worker id");
  return rng.uniform_index(problem.samples(p));
}

struct VarianceEstimate {
  double value = 0.0;
  std::size_t n_samples = 0;
  bool exact = false;
  double std_error = 0.0;  // zero in exact mode
};

/// (1/P) sum_p (1/n_p) sum_i ||grad f_{i,p}(x) - grad F(x)||^2 by enumeration.
inline VarianceEstimate estimate_variance_exact(const Problem& problem, std::span<const double> x) {
  const Vec full = problem.full_grad(x);
  Vec g(problem.dim());
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < problem.workers(); ++p) {
    double part = 0.0;
    for (std::size_t i = 0; i < problem.samples(p); ++i) {
      problem.sample_grad_into(p, i, x, g);
      part += distance_sq(g, full);
      ++count;
    }
    acc += part / static_cast<double>(problem.samples(p));
  }
  return {acc / static_cast<double>(problem.workers()), count, true, 0.0};
}

/// Monte-Carlo version: workers uniform, then samples uniform within the worker.
inline VarianceEstimate estimate_variance_sampled(const Problem& problem,
                                                  std::span<const double> x,
                                                  std::size_t count, Stream& rng) {
  if (count < 2) throw std::invalid_argument("estimate_variance: need at least 2 samples");
  const Vec full = problem.full_grad(x);
  Vec g(problem.dim());
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t p = rng.uniform_index(problem.workers());
    const std::size_t i = sample_index(problem, p, rng);
    problem.sample_grad_into(p, i, x, g);
    const double v = distance_sq(g, full);
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(count);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, count, false, std::sqrt(var / n)};
}

}  // namespace sparsefeed
