#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <set>

#include "sparsefeed/objectives.hpp"

using namespace sparsefeed;

namespace {

Vec random_point(Stream& rng, std::size_t d, double spread = 1.0) {
  Vec x(d);
  for (double& v : x) v = spread * rng.normal();
  return x;
}

double rel_err(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(distance_sq(a, b)) / std::max(norm(b), 1e-12);
}

// Central differences of F with step h.
Vec numeric_grad(const Problem& p, std::span<const double> x, double h = 1e-6) {
  Vec g(x.size()), xp(x.begin(), x.end());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double keep = xp[j];
    xp[j] = keep + h;
    const double up = p.value(xp);
    xp[j] = keep - h;
    const double down = p.value(xp);
    xp[j] = keep;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

Dataset blobs(std::size_t n, std::size_t m, std::size_t classes, std::uint64_t seed) {
  Stream rng(seed);
  Dataset data;
  data.features = Matrix(n, m);
  data.classes = classes;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y = r % classes;
    data.labels.push_back(y);
    for (std::size_t j = 0; j < m; ++j)
      data.features(r, j) = 0.5 * rng.normal() + (j % classes == y ? 1.0 : 0.0);
  }
  return data;
}

std::vector<std::pair<std::string, Problem>> builtin_problems() {
  std::vector<std::pair<std::string, Problem>> out;
  out.emplace_back("quadratic", make_quadratic(6, 4.0, 0.5, 5, 3, 7));
  out.emplace_back("logreg", make_logreg(blobs(30, 4, 3, 11), 1e-2, 3, 5));
  out.emplace_back("nonconvex", make_nonconvex(5, 8, 2, 3));
  const Problem nc = make_nonconvex(5, 8, 2, 3);
  out.emplace_back("regularized", regularize(nc, nc.L(), Vec(5, 0.3)));
  return out;
}

}  // namespace

TEST(Quadratic, SingleCoordinateWithZeroCenters) {
  const Problem p = make_quadratic(1, 1.0, 1.0, 3, 2, 99, 0.0);
  const Vec x{3.0};
  EXPECT_DOUBLE_EQ(p.value(x), 4.5);
  ASSERT_TRUE(p.optimum().has_value());
  EXPECT_EQ(p.optimum()->x, Vec{0.0});
  EXPECT_EQ(p.optimum()->value, 0.0);
  EXPECT_DOUBLE_EQ(p.full_grad(x)[0], 3.0);
}

TEST(Quadratic, ExtremeEigenvaluesArePinned) {
  const Problem p = make_quadratic(2, 2.0, 1.0, 1, 1, 5);
  const auto& q = dynamic_cast<const QuadraticObjective&>(*p.objective());
  Vec diag = q.diag();
  std::sort(diag.begin(), diag.end());
  EXPECT_EQ(diag, (Vec{1.0, 2.0}));
  EXPECT_EQ(p.L(), 2.0);
  EXPECT_EQ(p.mu(), 1.0);
}

TEST(Quadratic, EigenvaluesStayInRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem p = make_quadratic(30, 10.0, 0.1, 1, 1, seed);
    const auto& diag = dynamic_cast<const QuadraticObjective&>(*p.objective()).diag();
    EXPECT_EQ(*std::min_element(diag.begin(), diag.end()), 0.1);
    EXPECT_EQ(*std::max_element(diag.begin(), diag.end()), 10.0);
  }
}

TEST(Quadratic, RejectsBadConstants) {
  EXPECT_THROW(make_quadratic(3, 1.0, 2.0, 1, 1, 0), std::invalid_argument);
  EXPECT_THROW(make_quadratic(3, 1.0, 0.0, 1, 1, 0), std::invalid_argument);
  EXPECT_THROW(make_quadratic(3, 1.0, -1.0, 1, 1, 0), std::invalid_argument);
  EXPECT_THROW(make_quadratic(0, 1.0, 0.5, 1, 1, 0), std::invalid_argument);
}

TEST(Quadratic, VarianceAtOptimumEqualsEnumeratedMean) {
  const Problem p = make_quadratic(4, 1.0, 0.2, 3, 2, 7);
  const Vec& xs = p.optimum()->x;
  double acc = 0.0;
  for (std::size_t q = 0; q < 2; ++q)
    for (std::size_t i = 0; i < 3; ++i) acc += norm_sq(p.sample_grad(q, i, xs));
  const VarianceEstimate v = estimate_variance_exact(p, xs);
  EXPECT_TRUE(v.exact);
  EXPECT_EQ(v.n_samples, 6u);
  EXPECT_NEAR(v.value, acc / 6.0, 1e-14);
}

TEST(Quadratic, GradientVanishesAtOptimum) {
  for (std::uint64_t seed : {1u, 7u, 42u}) {
    const Problem p = make_quadratic(25, 10.0, 0.1, 7, 4, seed);
    for (double g : p.full_grad(p.optimum()->x)) EXPECT_NEAR(g, 0.0, 1e-10);
  }
}

TEST(Quadratic, SmoothnessConstantIsTight) {
  const Problem p = make_quadratic(8, 5.0, 0.5, 2, 2, 3);
  const auto& diag = dynamic_cast<const QuadraticObjective&>(*p.objective()).diag();
  Stream rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec x = random_point(rng, 8), y = random_point(rng, 8);
    const double lhs = std::sqrt(distance_sq(p.full_grad(x), p.full_grad(y)));
    EXPECT_LE(lhs, p.L() * std::sqrt(distance_sq(x, y)) * (1 + 1e-12));
  }
  const std::size_t top = static_cast<std::size_t>(
      std::max_element(diag.begin(), diag.end()) - diag.begin());
  Vec x(8, 0.0), y(8, 0.0);
  y[top] = 1.0;
  EXPECT_NEAR(std::sqrt(distance_sq(p.full_grad(x), p.full_grad(y))), p.L(), 1e-12);
}

TEST(Quadratic, StrongConvexitySpotCheck) {
  const Problem p = make_quadratic(8, 5.0, 0.5, 2, 2, 3);
  Stream rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec x = random_point(rng, 8, 3.0), y = random_point(rng, 8, 3.0);
    const Vec g = p.full_grad(x);
    const double lower = p.value(x) + dot(g, subtract(y, x)) + 0.5 * p.mu() * distance_sq(x, y);
    EXPECT_GE(p.value(y), lower - 1e-10);
  }
}

TEST(Quadratic, SameFiniteSumForAnyWorkerSplit) {
  const Problem split = make_quadratic(5, 2.0, 0.5, 3, 4, 11);
  const Problem whole = make_quadratic(5, 2.0, 0.5, 12, 1, 11);
  EXPECT_EQ(split.optimum()->x.size(), 5u);
  for (std::size_t j = 0; j < 5; ++j)
    EXPECT_NEAR(split.optimum()->x[j], whole.optimum()->x[j], 1e-14);
  EXPECT_EQ(split.sample_grad(2, 1, Vec(5, 0.0)), whole.sample_grad(0, 7, Vec(5, 0.0)));
}

TEST(Problems, FullGradientIsMeanOfSampleGradients) {
  Stream rng(21);
  for (const auto& [name, p] : builtin_problems()) {
    const Vec x = random_point(rng, p.dim(), 0.5);
    Vec acc(p.dim(), 0.0);
    // F is the mean over workers of per-worker means.
    for (std::size_t q = 0; q < p.workers(); ++q) {
      Vec part(p.dim(), 0.0);
      for (std::size_t i = 0; i < p.samples(q); ++i) axpy(1.0, p.sample_grad(q, i, x), part);
      axpy(1.0 / static_cast<double>(p.samples(q) * p.workers()), part, acc);
    }
    EXPECT_LE(rel_err(p.full_grad(x), acc), 1e-10) << name;
  }
}

TEST(Problems, GradientsMatchFiniteDifferences) {
  Stream rng(5);
  for (const auto& [name, p] : builtin_problems()) {
    for (int trial = 0; trial < 20; ++trial) {
      const Vec x = random_point(rng, p.dim(), 0.7);
      EXPECT_LE(rel_err(p.full_grad(x), numeric_grad(p, x)), 1e-4) << name << " trial " << trial;
    }
  }
}

TEST(LogReg, ZeroInputTwoClasses) {
  Dataset data;
  data.features = Matrix(1, 3, 0.0);
  data.labels = {1};
  data.classes = 2;
  const Problem p = make_logreg(data, 0.0, 1);
  const Vec w(6, 0.0);
  EXPECT_NEAR(p.value(w), std::numbers::ln2, 1e-15);
  for (double g : p.full_grad(w)) EXPECT_EQ(g, 0.0);
}

TEST(LogReg, StrongConvexityIsTheRegularizer) {
  const Problem p = make_logreg(blobs(10, 3, 2, 1), 1e-4, 2);
  EXPECT_EQ(p.mu(), 1e-4);
  EXPECT_FALSE(p.optimum().has_value());
}

TEST(LogReg, ThreeSamplesFiniteDifference) {
  Dataset data;
  data.features = Matrix(3, 2);
  data.features(0, 0) = 1.0;
  data.features(0, 1) = -0.5;
  data.features(1, 0) = 0.25;
  data.features(1, 1) = 2.0;
  data.features(2, 0) = -1.5;
  data.features(2, 1) = 0.75;
  data.labels = {0, 1, 1};
  data.classes = 2;
  const Problem p = make_logreg(data, 0.0, 1);
  const Vec w(4, 0.0);
  EXPECT_LE(rel_err(p.full_grad(w), numeric_grad(p, w)), 1e-4);
}

TEST(LogReg, Rejections) {
  Dataset empty;
  EXPECT_THROW(make_logreg(empty, 0.0, 1), std::invalid_argument);
  Dataset bad = blobs(4, 2, 2, 0);
  bad.labels[2] = 5;
  EXPECT_THROW(make_logreg(bad, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(make_logreg(blobs(2, 2, 2, 0), 0.0, 3), std::invalid_argument);
}

TEST(LogReg, SmoothnessBoundHolds) {
  const Problem p = make_logreg(blobs(40, 3, 3, 4), 1e-3, 2);
  Stream rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Vec x = random_point(rng, p.dim()), y = random_point(rng, p.dim());
    EXPECT_LE(std::sqrt(distance_sq(p.full_grad(x), p.full_grad(y))),
              p.L() * std::sqrt(distance_sq(x, y)));
  }
}

TEST(Partition, EveryRowAssignedOnce) {
  for (std::size_t n : {1u, 7u, 100u, 101u})
    for (std::size_t P : {1u, 3u, 7u}) {
      if (n < P) continue;
      const auto parts = partition_rows(n, P, 13);
      std::multiset<std::size_t> seen;
      std::size_t lo = n, hi = 0;
      for (const auto& part : parts) {
        seen.insert(part.begin(), part.end());
        lo = std::min(lo, part.size());
        hi = std::max(hi, part.size());
      }
      EXPECT_EQ(seen.size(), n);
      for (std::size_t r = 0; r < n; ++r) EXPECT_EQ(seen.count(r), 1u);
      EXPECT_LE(hi - lo, 1u);
    }
}

TEST(Nonconvex, RegularizerAtOrigin) {
  const Vec zero(4, 0.0);
  EXPECT_EQ(nonconvex_penalty(zero), 0.0);
  EXPECT_EQ(nonconvex_penalty_grad(0.0), 0.0);
}

TEST(Nonconvex, CurvatureSupremumIsTwoAtZero) {
  double best = 0.0, arg = 1.0;
  for (int i = -40000; i <= 40000; ++i) {
    const double v = i * 1e-4;
    const double c = std::abs(nonconvex_penalty_curvature(v));
    if (c > best) {
      best = c;
      arg = v;
    }
  }
  EXPECT_NEAR(best, 2.0, 1e-12);
  EXPECT_EQ(arg, 0.0);
  // Cross-check the closed form against second differences.
  for (double v : {-1.3, -0.2, 0.0, 0.4, 2.5}) {
    const double h = 1e-4;
    const double num = (nonconvex_penalty_grad(v + h) - nonconvex_penalty_grad(v - h)) / (2 * h);
    EXPECT_NEAR(nonconvex_penalty_curvature(v), num, 1e-6);
  }
}

TEST(Nonconvex, HasNoStrongConvexityOrOptimum) {
  const Problem p = make_nonconvex(5, 4, 2, 1);
  EXPECT_EQ(p.mu(), 0.0);
  EXPECT_FALSE(p.optimum().has_value());
}

TEST(Regularize, ZeroSigmaIsIdentity) {
  const Problem base = make_quadratic(6, 3.0, 0.3, 4, 2, 1);
  const Problem reg = regularize(base, 0.0, Vec(6, 5.0));
  Stream rng(3);
  const Vec x = random_point(rng, 6);
  EXPECT_EQ(base.full_grad(x), reg.full_grad(x));
  EXPECT_EQ(base.sample_grad(1, 2, x), reg.sample_grad(1, 2, x));
  EXPECT_EQ(base.value(x), reg.value(x));
}

TEST(Regularize, SigmaEqualLGivesThreeLAndL) {
  const Problem nc = make_nonconvex(6, 5, 2, 8);
  const Problem reg = regularize(nc, nc.L(), Vec(6, 0.0));
  EXPECT_DOUBLE_EQ(reg.L(), 3.0 * nc.L());
  EXPECT_DOUBLE_EQ(reg.mu(), nc.L());
}

TEST(Regularize, PenaltyGradientVanishesAtCenter) {
  const Problem base = make_nonconvex(4, 3, 1, 2);
  Stream rng(12);
  const Vec c = random_point(rng, 4);
  const Problem reg = regularize(base, 2.5, c);
  EXPECT_EQ(reg.full_grad(c), base.full_grad(c));
  EXPECT_EQ(reg.value(c), base.value(c));
}

TEST(Regularize, StrongConvexityWithParameterL) {
  const Problem nc = make_nonconvex(6, 10, 2, 4);
  Stream rng(31);
  const Vec center = random_point(rng, 6);
  const Problem reg = regularize(nc, nc.L(), center);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = random_point(rng, 6, 2.0), y = random_point(rng, 6, 2.0);
    const double lower =
        reg.value(x) + dot(reg.full_grad(x), subtract(y, x)) + 0.5 * nc.L() * distance_sq(x, y);
    EXPECT_GE(reg.value(y), lower - 1e-10);
  }
}

TEST(SampleIndex, SingletonAlwaysZero) {
  const Problem p = make_quadratic(2, 1.0, 0.5, 1, 2, 0);
  Stream rng(4);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_index(p, 1, rng), 0u);
}

TEST(SampleIndex, UniformWithinThreeSigma) {
  const Problem p = make_quadratic(2, 1.0, 0.5, 4, 1, 0);
  Stream rng = StreamFactory(17).stream(0, 0, Channel::sample);
  std::vector<std::size_t> counts(4, 0);
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) ++counts[sample_index(p, 0, rng)];
  const double sd = std::sqrt(n * 0.25 * 0.75);
  for (std::size_t c : counts) EXPECT_LT(std::abs(static_cast<double>(c) - 0.25 * n), 3 * sd);
}

TEST(SampleIndex, DeterministicPerRoundAndWorker) {
  const Problem p = make_quadratic(2, 1.0, 0.5, 1000, 3, 0);
  const StreamFactory f(77);
  for (std::size_t t = 1; t < 20; ++t)
    for (std::size_t q = 0; q < 3; ++q) {
      Stream a = f.stream(t, q, Channel::sample), b = f.stream(t, q, Channel::sample);
      EXPECT_EQ(sample_index(p, q, a), sample_index(p, q, b));
    }
  EXPECT_THROW(
      {
        Stream r(1);
        sample_index(p, 3, r);
      },
      std::out_of_range);
}

TEST(Variance, IdenticalSamplesGiveZero) {
  const Problem p = make_quadratic(5, 2.0, 1.0, 4, 2, 3, 0.0);
  Stream rng(1);
  const Vec x = random_point(rng, 5);
  EXPECT_EQ(estimate_variance_exact(p, x).value, 0.0);
}

TEST(Variance, TwoSignedSamplesGiveOne) {
  const Problem p = make_quadratic_from(Vec{1.0}, {Vec{-1.0}, Vec{1.0}}, 1);
  for (double x : {-2.0, 0.0, 0.3, 5.0}) {
    const VarianceEstimate v = estimate_variance_exact(p, Vec{x});
    EXPECT_NEAR(v.value, 1.0, 1e-15);
    EXPECT_EQ(v.n_samples, 2u);
  }
}

TEST(Variance, SampledAgreesWithExactWithinThreeSigma) {
  const Problem p = make_quadratic(6, 3.0, 0.5, 20, 3, 7);
  const Vec x(6, 0.25);
  const VarianceEstimate exact = estimate_variance_exact(p, x);
  Stream rng = StreamFactory(7).stream(0, 0, Channel::sample);
  const VarianceEstimate mc = estimate_variance_sampled(p, x, 20000, rng);
  EXPECT_FALSE(mc.exact);
  EXPECT_GE(mc.value, 0.0);
  EXPECT_LT(std::abs(mc.value - exact.value), 3.0 * mc.std_error);
}
