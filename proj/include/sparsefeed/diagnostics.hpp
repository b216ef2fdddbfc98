#pragma once

// Statistical and exact verifiers for the compressor, the error-feedback
// memories, and the accelerated transition.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sparsefeed/compression.hpp"
#include "sparsefeed/linalg.hpp"
#include "sparsefeed/objectives.hpp"
#include "sparsefeed/optimizers.hpp"
#include "sparsefeed/random.hpp"
#include "sparsefeed/simulator.hpp"

namespace sparsefeed {

struct CheckReport {
  std::string name;
  bool passed = false;
  double statistic = 0.0;
  double threshold = 0.0;
  std::size_t n_trials = 0;
  std::string details;
};

using Compressor =
    std::function<CompressedMessage(std::span<const double>, std::size_t, Stream&)>;

inline Compressor rand_comp_compressor(Sampling sampling = Sampling::without_replacement) {
  return [sampling](std::span<const double> x, std::size_t k, Stream& rng) {
    return rand_comp(x, k, rng, sampling);
  };
}

inline Compressor top_k_compressor() {
  return [](std::span<const double> x, std::size_t k, Stream&) { return top_k(x, k); };
}

/// Fixed probe vector used when the caller supplies only a dimension:
/// x_j = (j + 1) * (-1)^j / d.
inline Vec probe_vector(std::size_t d) {
  Vec x(d);
  for (std::size_t j = 0; j < d; ++j)
    x[j] = (j % 2 ? -1.0 : 1.0) * static_cast<double>(j + 1) / static_cast<double>(d);
  return x;
}

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

/// z-score of an empirical mean. Zero spread means the draws were constant:
/// the deviation must then vanish up to rounding, otherwise z is infinite.
inline double z_score(double mean, double sd, double target, std::size_t n) {
  const double dev = mean - target;
  const double slack = 1e-12 * (std::abs(target) + 1.0);
  if (sd <= slack) return std::abs(dev) <= slack ? 0.0 : std::numeric_limits<double>::infinity();
  return dev / (sd / std::sqrt(static_cast<double>(n)));
}

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double sd() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
    return std::sqrt(std::max(0.0, var));
  }
};

inline std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  std::uint64_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace detail

/// Componentwise z-test that the mean of `trials` compressed copies of x equals x.
inline CheckReport check_unbiasedness(std::span<const double> x, std::size_t k,
                                      std::size_t trials, Stream& rng,
                                      const Compressor& compress = rand_comp_compressor(),
                                      double threshold = 4.0) {
  const std::size_t d = x.size();
  std::vector<detail::Moments> acc(d);
  Vec dense(d);
  for (std::size_t r = 0; r < trials; ++r) {
    densify_into(compress(x, k, rng), dense);
    for (std::size_t j = 0; j < d; ++j) acc[j].add(dense[j]);
  }
  CheckReport rep{"unbiasedness", true, 0.0, threshold, trials, {}};
  std::size_t worst = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const double z = std::abs(detail::z_score(acc[j].mean(), acc[j].sd(), x[j], trials));
    if (z > rep.statistic || j == 0) {
      rep.statistic = z;
      worst = j;
    }
  }
  rep.passed = rep.statistic < threshold;
  if (!rep.passed)
    rep.details = "coordinate " + std::to_string(worst) + ": mean " +
                  detail::fmt_double(acc[worst].mean()) + " vs " + detail::fmt_double(x[worst]) +
                  ", |z| = " + detail::fmt_double(rep.statistic);
  return rep;
}

inline CheckReport check_unbiasedness(std::size_t k, std::size_t d, std::size_t trials,
                                      Stream& rng) {
  const Vec x = probe_vector(d);
  return check_unbiasedness(x, k, trials, rng);
}

/// Every size-k subset of [d] must appear with frequency 1/C(d,k) (max |z| < threshold).
inline CheckReport check_subset_uniformity(std::size_t d, std::size_t k, std::size_t trials,
                                           Stream& rng, double threshold = 4.0) {
  check_budget(k, d);
  if (d > 24) throw std::invalid_argument("check_subset_uniformity: d too large to tabulate");
  std::map<std::uint32_t, std::size_t> counts;
  for (std::size_t r = 0; r < trials; ++r) {
    std::uint32_t mask = 0;
    for (std::size_t j : sample_subset(d, k, rng)) mask |= 1u << j;
    ++counts[mask];
  }
  const double cells = static_cast<double>(detail::binomial(d, k));
  const double p = 1.0 / cells;
  const double n = static_cast<double>(trials);
  const double sd = std::sqrt(n * p * (1.0 - p));
  CheckReport rep{"subset_uniformity", true, 0.0, threshold, trials, {}};
  if (static_cast<double>(counts.size()) != cells) {
    rep.passed = false;
    rep.statistic = std::numeric_limits<double>::infinity();
    rep.details = "observed " + std::to_string(counts.size()) + " of " +
                  detail::fmt_double(cells) + " subsets";
    return rep;
  }
  for (const auto& [mask, c] : counts) {
    const double z = sd > 0.0 ? std::abs(static_cast<double>(c) - n * p) / sd : 0.0;
    rep.statistic = std::max(rep.statistic, z);
  }
  rep.passed = rep.statistic < threshold;
  if (!rep.passed) rep.details = "max |z| over subsets = " + detail::fmt_double(rep.statistic);
  return rep;
}

/// E||densify(rand_comp(x, k)) - x||^2 = (d/k - 1) ||x||^2. Exact enumeration
/// of all subsets when d <= 6 (tolerance 1e-12 relative), otherwise a
/// Monte-Carlo z-test with `trials` draws.
inline CheckReport check_second_moment(std::span<const double> x, std::size_t k, Stream& rng,
                                       std::size_t trials = 100000, double threshold = 3.0) {
  const std::size_t d = x.size();
  check_budget(k, d);
  const double expected =
      (static_cast<double>(d) / static_cast<double>(k) - 1.0) * norm_sq(x);
  CheckReport rep{"second_moment", true, 0.0, 0.0, 0, {}};
  if (d <= 6) {
    // Enumerate k-subsets as bitmasks with exactly k bits set.
    double total = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> subset;
    for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
      subset.clear();
      for (std::size_t j = 0; j < d; ++j)
        if (mask & (1u << j)) subset.push_back(j);
      total += distance_sq(densify(rand_comp_on(x, subset)), x);
      ++count;
    }
    const double mean = total / static_cast<double>(count);
    rep.n_trials = count;
    rep.statistic = std::abs(mean - expected) / std::max(1.0, std::abs(expected));
    rep.threshold = 1e-12;
    rep.passed = rep.statistic <= rep.threshold;
    if (!rep.passed)
      rep.details = "enumerated " + detail::fmt_double(mean) + " vs " + detail::fmt_double(expected);
    return rep;
  }
  detail::Moments m;
  for (std::size_t r = 0; r < trials; ++r)
    m.add(distance_sq(densify(rand_comp(x, k, rng)), x));
  rep.n_trials = trials;
  rep.threshold = threshold;
  rep.statistic = std::abs(detail::z_score(m.mean(), m.sd(), expected, trials));
  rep.passed = rep.statistic < threshold;
  if (!rep.passed)
    rep.details = "mean " + detail::fmt_double(m.mean()) + " vs " + detail::fmt_double(expected) +
                  ", |z| = " + detail::fmt_double(rep.statistic);
  return rep;
}

inline CheckReport check_second_moment(std::size_t k, std::size_t d, Stream& rng,
                                       std::size_t trials = 100000) {
  const Vec x = probe_vector(d);
  return check_second_moment(x, k, rng, trials);
}

// ---------------------------------------------------------------------------
// Memory diagnostics. These drive the round functions directly.

namespace detail {

/// Worker memories after each round of one seeded run. For the accelerated
/// method each snapshot holds m, m^(y), m^(z) in that order.
inline std::vector<std::vector<std::vector<Vec>>> memory_snapshots(
    Method method, const Problem& problem, const HyperParams& hp, std::size_t rounds,
    std::uint64_t seed, const RoundOptions& opt = {}) {
  const StreamFactory streams(seed);
  const Vec x0(problem.dim(), 0.0);
  std::vector<std::vector<std::vector<Vec>>> out;
  out.reserve(rounds);
  const RandCompSparsifier sparsify;
  if (method == Method::s_sgd_ef) {
    SgdEfState s = make_sgd_ef_state(x0, problem.workers());
    for (std::size_t r = 0; r < rounds; ++r) {
      s = s_sgd_ef_round(problem, std::move(s), hp, streams, sparsify, opt).state;
      out.push_back({s.mem});
    }
  } else if (method == Method::s_snag_ef) {
    SnagEfState s = make_snag_ef_state(x0, problem.workers());
    for (std::size_t r = 0; r < rounds; ++r) {
      s = s_snag_ef_round(problem, std::move(s), hp, streams, sparsify, opt).state;
      out.push_back({s.mem, s.mem_y, s.mem_z});
    }
  } else {
    throw std::invalid_argument("memory diagnostics need s_sgd_ef or s_snag_ef");
  }
  return out;
}

/// ||(1/P) sum_p m_{t,p}||^2 for t = 1..rounds in one seeded run.
inline Vec aggregate_memory_curve(Method method, const Problem& problem, const HyperParams& hp,
                                  std::size_t rounds, std::uint64_t seed) {
  const StreamFactory streams(seed);
  const Vec x0(problem.dim(), 0.0);
  const RandCompSparsifier sparsify;
  Vec curve;
  curve.reserve(rounds);
  if (method == Method::s_sgd_ef) {
    SgdEfState s = make_sgd_ef_state(x0, problem.workers());
    for (std::size_t r = 0; r < rounds; ++r) {
      s = s_sgd_ef_round(problem, std::move(s), hp, streams, sparsify).state;
      curve.push_back(norm_sq(s.mem_avg));
    }
  } else if (method == Method::s_snag_ef) {
    SnagEfState s = make_snag_ef_state(x0, problem.workers());
    for (std::size_t r = 0; r < rounds; ++r) {
      s = s_snag_ef_round(problem, std::move(s), hp, streams, sparsify).state;
      curve.push_back(norm_sq(s.mem_avg));
    }
  } else {
    throw std::invalid_argument("memory diagnostics need s_sgd_ef or s_snag_ef");
  }
  return curve;
}

}  // namespace detail

/// Mean over `trials` seeded runs (seeds seed, seed+1, ...) of ||m_t||^2, t = 1..rounds.
inline Vec mean_memory_curve(Method method, const Problem& problem, const HyperParams& hp,
                             std::size_t rounds, std::size_t trials, std::uint64_t seed) {
  Vec mean(rounds, 0.0);
  for (std::size_t r = 0; r < trials; ++r)
    axpy(1.0, detail::aggregate_memory_curve(method, problem, hp, rounds, seed + r), mean);
  scale(1.0 / static_cast<double>(trials), mean);
  return mean;
}

/// Mean of curve[t] over rounds whose 1-based index falls in (lo*T, hi*T].
inline double window_mean(std::span<const double> curve, double lo, double hi) {
  const std::size_t T = curve.size();
  const auto a = static_cast<std::size_t>(std::floor(lo * static_cast<double>(T)));
  const auto b = std::max(a + 1, static_cast<std::size_t>(std::floor(hi * static_cast<double>(T))));
  double acc = 0.0;
  for (std::size_t i = a; i < std::min(b, T); ++i) acc += curve[i];
  return acc / static_cast<double>(std::min(b, T) - a);
}

/// Plateau level: mean of the last quarter of the curve.
inline double plateau_level(std::span<const double> curve) { return window_mean(curve, 0.75, 1.0); }

/// Zero-mean test for <m_{t,p1}, m_{t,p2}> over independent seeded runs, for
/// every worker pair and every t in `times` (and every memory kind of the
/// accelerated method).
inline CheckReport check_memory_orthogonality(Method method, const Problem& problem,
                                              const HyperParams& hp,
                                              std::span<const std::size_t> times,
                                              std::size_t trials, std::uint64_t seed,
                                              double threshold = 4.0) {
  const std::size_t P = problem.workers();
  if (P < 2) throw std::invalid_argument("check_memory_orthogonality: need P >= 2");
  std::size_t horizon = 0;
  for (std::size_t t : times) horizon = std::max(horizon, t);
  const std::size_t kinds = method == Method::s_snag_ef ? 3 : 1;
  // acc[time index][kind][pair index]
  const std::size_t pairs = P * (P - 1) / 2;
  std::vector<std::vector<std::vector<detail::Moments>>> acc(
      times.size(), std::vector<std::vector<detail::Moments>>(
                        kinds, std::vector<detail::Moments>(pairs)));
  for (std::size_t r = 0; r < trials; ++r) {
    const auto snaps = detail::memory_snapshots(method, problem, hp, horizon, seed + r);
    for (std::size_t a = 0; a < times.size(); ++a) {
      for (std::size_t kind = 0; kind < kinds; ++kind) {
        std::size_t pi = 0;
        for (std::size_t p1 = 0; p1 < P; ++p1) {
          for (std::size_t p2 = p1 + 1; p2 < P; ++p2, ++pi) {
            double v = 0.0;
            if (times[a] > 0) {
              const auto& mem = snaps[times[a] - 1][kind];
              v = dot(mem[p1], mem[p2]);
            }
            acc[a][kind][pi].add(v);
          }
        }
      }
    }
  }
  static const char* kind_names[] = {"m", "m_y", "m_z"};
  CheckReport rep{std::string("memory_orthogonality/") + method_name(method), true, 0.0,
                  threshold, trials, {}};
  std::ostringstream worst;
  for (std::size_t a = 0; a < times.size(); ++a)
    for (std::size_t kind = 0; kind < kinds; ++kind)
      for (const auto& m : acc[a][kind]) {
        const double z = std::abs(detail::z_score(m.mean(), m.sd(), 0.0, trials));
        if (z > rep.statistic || (a == 0 && kind == 0)) {
          rep.statistic = std::max(rep.statistic, z);
          worst.str("");
          worst << "t=" << times[a] << " " << kind_names[kind] << ": mean " << m.mean() << ", sd "
                << m.sd() << ", |z| = " << z;
        }
      }
  rep.passed = rep.statistic < threshold;
  if (!rep.passed) rep.details = worst.str();
  return rep;
}

/// beta <= gamma^3 / alpha^2, the precondition of the accelerated memory bound.
inline bool accel_memory_precondition(const HyperParams& hp) {
  if (hp.alpha == 0.0) return true;
  return hp.beta <= hp.gamma * hp.gamma * hp.gamma / (hp.alpha * hp.alpha);
}

/// Boundedness of E||m_t||^2: the ratio of the last-quarter mean to the
/// second-quarter mean must stay below `growth_limit`. For the accelerated
/// method the beta <= gamma^3/alpha^2 precondition is asserted first.
inline CheckReport check_memory_bound(Method method, const Problem& problem,
                                      const HyperParams& hp, std::size_t rounds,
                                      std::size_t trials, std::uint64_t seed,
                                      double growth_limit = 1.25) {
  CheckReport rep{std::string("memory_bound/") + method_name(method), false, 0.0, growth_limit,
                  trials, {}};
  if (rounds < 8) throw std::invalid_argument("check_memory_bound: need at least 8 rounds");
  if (method == Method::s_snag_ef && !accel_memory_precondition(hp)) {
    rep.statistic = std::numeric_limits<double>::infinity();
    rep.details = "precondition beta <= gamma^3/alpha^2 fails: beta = " +
                  detail::fmt_double(hp.beta) + ", gamma^3/alpha^2 = " +
                  detail::fmt_double(hp.gamma * hp.gamma * hp.gamma / (hp.alpha * hp.alpha));
    return rep;
  }
  const Vec curve = mean_memory_curve(method, problem, hp, rounds, trials, seed);
  const double late = plateau_level(curve);
  const double early = window_mean(curve, 0.25, 0.5);
  if (late == 0.0 && early == 0.0) {
    rep.passed = true;
    return rep;
  }
  rep.statistic = early > 0.0 ? late / early : std::numeric_limits<double>::infinity();
  rep.passed = std::isfinite(late) && rep.statistic < growth_limit;
  if (!rep.passed)
    rep.details = "E||m||^2 keeps growing: " + detail::fmt_double(early) + " -> " +
                  detail::fmt_double(late);
  return rep;
}

/// Plateau of E||m_t||^2 with P workers must be within [lo, hi] times the
/// single-worker plateau on the same finite sum.
inline CheckReport check_memory_scaling(Method method, const Problem& single,
                                        const Problem& many, const HyperParams& hp,
                                        std::size_t rounds, std::size_t trials, std::uint64_t seed,
                                        double lo = -1.0, double hi = -1.0) {
  const double P = static_cast<double>(many.workers());
  if (lo < 0.0) lo = 0.5 / P;
  if (hi < 0.0) hi = 2.0 / P;
  const double base = plateau_level(mean_memory_curve(method, single, hp, rounds, trials, seed));
  const double scaled = plateau_level(mean_memory_curve(method, many, hp, rounds, trials, seed));
  CheckReport rep{std::string("memory_scaling/") + method_name(method), false, 0.0, hi, trials,
                  {}};
  rep.statistic = base > 0.0 ? scaled / base : std::numeric_limits<double>::infinity();
  rep.passed = rep.statistic >= lo && rep.statistic <= hi;
  std::ostringstream os;
  os << "plateau P=" << single.workers() << ": " << base << ", P=" << many.workers() << ": "
     << scaled << ", ratio " << rep.statistic << " (bracket [" << lo << ", " << hi << "])";
  rep.details = os.str();
  return rep;
}

/// Momentum form of deterministic NAG, coded independently of OneIterNAG:
///   v_t = c v_{t-1} - alpha (lambda - eta) g,  x_t = x_{t-1} - eta g + v_t,
/// with c = (1 - alpha)(1 - beta), g = grad F(x_{t-1}), v_0 = 0.
inline std::vector<Vec> nag_momentum_form(const Problem& problem, std::span<const double> x_in,
                                          double eta, const AccelParams& a, std::size_t T) {
  const std::size_t d = problem.dim();
  const double c = (1.0 - a.alpha) * (1.0 - a.beta);
  const double kick = a.alpha * (a.lambda - eta);
  Vec x(x_in.begin(), x_in.end()), v(d, 0.0), g(d);
  std::vector<Vec> xs{x};
  for (std::size_t t = 0; t < T; ++t) {
    problem.full_grad_into(x, g);
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = c * v[j] - kick * g[j];
      x[j] = x[j] - eta * g[j] + v[j];
    }
    xs.push_back(x);
  }
  return xs;
}

/// Three-sequence NAG against the momentum form, max over t of
/// ||x_t - x'_t|| / max(||x_t||, ||x_0||), pass below `tolerance`.
inline CheckReport check_nag_equivalence(const Problem& problem, double eta, double mu,
                                         std::size_t T, std::span<const double> x0 = {},
                                         double tolerance = 1e-8) {
  const AccelParams a = schedule_accel_params(eta, mu);
  Vec start = x0.empty() ? Vec(problem.dim(), 1.0) : Vec(x0.begin(), x0.end());
  const auto three = nag(problem, start, eta, a, T).xs;
  const auto momentum = nag_momentum_form(problem, start, eta, a, T);
  CheckReport rep{"nag_equivalence", true, 0.0, tolerance, T, {}};
  const double base = norm(start);
  std::size_t worst_t = 0;
  for (std::size_t t = 0; t <= T; ++t) {
    const double denom = std::max({norm(three[t]), base, std::numeric_limits<double>::min()});
    const double err = std::sqrt(distance_sq(three[t], momentum[t])) / denom;
    if (err > rep.statistic) {
      rep.statistic = err;
      worst_t = t;
    }
  }
  rep.passed = rep.statistic <= tolerance;
  if (!rep.passed)
    rep.details = "trajectories diverge at t=" + std::to_string(worst_t) +
                  ", relative error " + detail::fmt_double(rep.statistic);
  return rep;
}

}  // namespace sparsefeed
