#pragma once

// Synchronous pseudo-distributed driver: round loop, communication metering,
// logging cadence, optional shadow trajectory.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparsefeed/compression.hpp"
#include "sparsefeed/linalg.hpp"
#include "sparsefeed/objectives.hpp"
#include "sparsefeed/optimizers.hpp"
#include "sparsefeed/random.hpp"
#include "sparsefeed/trace.hpp"

namespace sparsefeed {

enum class Method { parallel_sgd, naive_sparse, topk_ef, s_sgd_ef, snag, s_snag_ef, reg_s_snag_ef };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::parallel_sgd: return "parallel_sgd";
    case Method::naive_sparse: return "naive_sparse";
    case Method::topk_ef: return "topk_ef";
    case Method::s_sgd_ef: return "s_sgd_ef";
    case Method::snag: return "snag";
    case Method::s_snag_ef: return "s_snag_ef";
    case Method::reg_s_snag_ef: return "reg_s_snag_ef";
  }
  return "?";
}

inline bool is_accelerated(Method m) {
  return m == Method::snag || m == Method::s_snag_ef || m == Method::reg_s_snag_ef;
}

struct CommCost {
  std::size_t raw = 0;
  std::size_t capped = 0;

  friend bool operator==(const CommCost&, const CommCost&) = default;
};

/// Closed-form payload per round for constant k. raw counts every scalar slot
/// sent by the P workers; capped clips each message channel's aggregate at d.
inline CommCost comm_cost_per_round(Method method, std::size_t k, std::size_t d, std::size_t P,
                                    bool full_precision = false) {
  const auto channel = [&](std::size_t kk) {
    const std::size_t raw = P * std::min(kk, d);
    return CommCost{raw, std::min(raw, d)};
  };
  switch (method) {
    case Method::parallel_sgd:
    case Method::snag:
      return channel(d);
    case Method::naive_sparse:
    case Method::topk_ef:
    case Method::s_sgd_ef:
      return channel(k);
    case Method::s_snag_ef:
    case Method::reg_s_snag_ef: {
      if (full_precision) return channel(d);
      const auto [ky, kz] = split_budget(k);
      const CommCost a = channel(ky), b = channel(kz);
      return {a.raw + b.raw, a.capped + b.capped};
    }
  }
  throw std::invalid_argument("comm_cost_per_round: unknown method");
}

/// Extra per-record metrics (for instance test accuracy) computed from x.
using Evaluator = std::function<std::vector<double>(std::span<const double>)>;

struct RunSpec {
  Method method = Method::s_sgd_ef;
  HyperParams hp;
  RoundOptions round;
  Sampling sampling = Sampling::without_replacement;
  OutputRule output_rule = OutputRule::last;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;  // 0 selects max(1, T/500)
  std::size_t window = 1;     // trailing rounds whose iterates are all stored
  bool shadow = false;
  bool full_precision = false;  // accelerated methods: ship dense messages
  Vec x0;                       // empty means the origin
  std::uint64_t fingerprint = 0;
  Evaluator evaluator;
  std::vector<std::string> extra_names;
};

/// Raised when the shadow identity m_t = x_t - shadow_t breaks.
class ShadowViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kShadowTolerance = 1e-9;

namespace detail {

inline std::size_t default_log_every(std::size_t T) { return std::max<std::size_t>(1, T / 500); }

/// ||(a - b) - m|| relative to ||a|| + ||b|| + ||m||.
inline double shadow_error(std::span<const double> a, std::span<const double> b,
                           std::span<const double> m) {
  double diff = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double r = (a[j] - b[j]) - m[j];
    diff += r * r;
  }
  const double scale = norm(a) + norm(b) + norm(m);
  return scale > 0.0 ? std::sqrt(diff) / scale : std::sqrt(diff);
}

class Recorder {
 public:
  Recorder(const Problem& problem, const RunSpec& spec, std::size_t total_rounds, Trace& trace)
      : problem_(problem), spec_(spec), total_(total_rounds), trace_(trace) {
    every_ = spec.log_every ? spec.log_every : default_log_every(total_rounds);
    trace_.extra_names = spec.extra_names;
    trace_.config_fingerprint = spec.fingerprint;
    trace_.seed = spec.seed;
    trace_.rounds = total_rounds;
  }

  void meter(const RoundReport& report) {
    round_ = {report.comm_raw, report.comm_capped};
    raw_cum_ += report.comm_raw;
    capped_cum_ += report.comm_capped;
  }

  void meter(CommCost cost) {
    round_ = cost;
    raw_cum_ += cost.raw;
    capped_cum_ += cost.capped;
  }

  void observe(std::size_t t, std::span<const double> x, std::span<const double> mem_avg) {
    const bool log = t % every_ == 0 || t == total_;
    const bool keep = log || t + spec_.window > total_;
    if (log) {
      RoundRecord r;
      r.t = t;
      r.loss = problem_.value(x);
      r.grad_norm_sq = norm_sq(problem_.full_grad(x));
      r.mem_norm_sq = mem_avg.empty() ? 0.0 : norm_sq(mem_avg);
      r.comm_raw_round = round_.raw;
      r.comm_capped_round = round_.capped;
      r.comm_raw_cum = raw_cum_;
      r.comm_capped_cum = capped_cum_;
      if (spec_.evaluator) r.extra = spec_.evaluator(x);
      trace_.records.push_back(std::move(r));
    }
    if (keep) trace_.iterates.push_back({t, Vec(x.begin(), x.end())});
  }

 private:
  const Problem& problem_;
  const RunSpec& spec_;
  std::size_t total_;
  std::size_t every_ = 1;
  Trace& trace_;
  CommCost round_{};
  std::size_t raw_cum_ = 0;
  std::size_t capped_cum_ = 0;
};

inline Vec initial_point(const Problem& problem, const RunSpec& spec) {
  if (spec.x0.empty()) return Vec(problem.dim(), 0.0);
  if (spec.x0.size() != problem.dim())
    throw std::invalid_argument("x0 has dimension " + std::to_string(spec.x0.size()) +
                                ", problem has " + std::to_string(problem.dim()));
  return spec.x0;
}

inline void raise_shadow(std::size_t t, const char* which, double err) {
  std::ostringstream os;
  os << "shadow identity violated at round " << t << " (" << which << "): relative error "
     << err << " > " << kShadowTolerance;
  throw ShadowViolation(os.str());
}

struct SgdShadow {
  Vec x;
};

struct SnagShadow {
  Vec x, y, z;
};

template <class Sparsifier>
void drive_sgd(const Problem& problem, const RunSpec& spec, SgdEfState& state,
               const Sparsifier* sparsify, Recorder& rec, Trace& trace) {
  const StreamFactory streams(spec.seed);
  const bool ef = spec.method != Method::parallel_sgd && spec.method != Method::naive_sparse;
  const bool track = spec.shadow && spec.method != Method::naive_sparse;
  SgdShadow shadow{state.x};
  if (track) trace.max_shadow_error = 0.0;
  for (std::size_t r = 0; r < spec.hp.T; ++r) {
    RoundResult<SgdEfState> out;
    if (spec.method == Method::parallel_sgd)
      out = parallel_sgd_round(problem, std::move(state), spec.hp, streams, spec.round);
    else if (spec.method == Method::naive_sparse)
      out = naive_sparse_round(problem, std::move(state), spec.hp, streams, spec.round,
                               spec.sampling);
    else
      out = s_sgd_ef_round(problem, std::move(state), spec.hp, streams, *sparsify, spec.round);
    state = std::move(out.state);
    rec.meter(out.report);
    if (ef) {
      trace.max_memory_avg_error =
          std::max(trace.max_memory_avg_error, memory_average_error(state.mem, state.mem_avg));
    }
    if (track) {
      axpy(-spec.hp.eta, out.report.raw_grad_mean, shadow.x);
      const Vec m = average(state.mem);
      const double err = shadow_error(state.x, shadow.x, m);
      trace.max_shadow_error = std::max(trace.max_shadow_error, err);
      if (err > kShadowTolerance) raise_shadow(state.t, "x", err);
    }
    rec.observe(state.t, state.x, state.mem_avg);
  }
}

/// Runs T accelerated rounds on `problem` starting from `state`. Communication
/// is overridden to a single dense channel in full-precision mode, where the
/// y- and z-messages coincide.
template <class Sparsifier>
void drive_snag(const Problem& problem, const RunSpec& spec, const HyperParams& hp,
                SnagEfState& state, const Sparsifier& sparsify, Recorder& rec, Trace& trace) {
  const StreamFactory streams(spec.seed);
  const bool dense = spec.method == Method::snag || spec.full_precision;
  const CommCost dense_cost = comm_cost_per_round(Method::snag, hp.k, problem.dim(),
                                                  problem.workers());
  SnagShadow shadow{state.x, state.y, state.z};
  if (spec.shadow && trace.max_shadow_error < 0.0) trace.max_shadow_error = 0.0;
  const std::size_t d = problem.dim();
  Vec dy(d), dz(d);
  for (std::size_t r = 0; r < hp.T; ++r) {
    auto out = s_snag_ef_round(problem, std::move(state), hp, streams, sparsify, spec.round);
    state = std::move(out.state);
    if (dense)
      rec.meter(dense_cost);
    else
      rec.meter(out.report);
    trace.max_memory_avg_error =
        std::max({trace.max_memory_avg_error, memory_average_error(state.mem, state.mem_avg),
                  memory_average_error(state.mem_y, state.mem_y_avg),
                  memory_average_error(state.mem_z, state.mem_z_avg)});
    if (spec.shadow) {
      for (std::size_t j = 0; j < d; ++j) {
        dy[j] = hp.eta * out.report.raw_grad_mean[j];
        dz[j] = hp.lambda * out.report.raw_grad_mean[j];
      }
      one_iter_nag(shadow.x, shadow.y, shadow.z, dy, dz, hp.alpha, hp.beta, spec.round.nag_form);
      const double ex = shadow_error(state.x, shadow.x, average(state.mem));
      const double ey = shadow_error(state.y, shadow.y, average(state.mem_y));
      const double ez = shadow_error(state.z, shadow.z, average(state.mem_z));
      trace.max_shadow_error = std::max({trace.max_shadow_error, ex, ey, ez});
      if (ex > kShadowTolerance) raise_shadow(state.t, "x", ex);
      if (ey > kShadowTolerance) raise_shadow(state.t, "y", ey);
      if (ez > kShadowTolerance) raise_shadow(state.t, "z", ez);
    }
    rec.observe(state.t, state.x, state.mem_avg);
  }
}

inline void choose_output(const Problem& problem, const RunSpec& spec, Trace& trace) {
  const std::vector<StoredIterate>& pool =
      spec.method == Method::reg_s_snag_ef && !trace.stage_iterates.empty() ? trace.stage_iterates
                                                                           : trace.iterates;
  const OutputRule rule = spec.method == Method::reg_s_snag_ef ? OutputRule::uniform
                                                               : spec.output_rule;
  double eta_mu = 0.0;
  if (rule == OutputRule::geometric) {
    const double mu = spec.hp.mu_hint > 0.0 ? spec.hp.mu_hint : problem.mu();
    eta_mu = spec.hp.eta * mu;
  }
  Stream rng = StreamFactory(spec.seed).stream(0, 0, Channel::output);
  trace.output = pool[select_output(pool, rule, rng, eta_mu)];
}

}  // namespace detail

/// Fills lambda/alpha/beta from (eta, mu_hint) unless already set.
inline HyperParams resolve_accel(HyperParams hp) {
  if (hp.lambda > 0.0) return hp;
  if (!(hp.mu_hint > 0.0))
    throw std::invalid_argument("accelerated method requires mu_hint > 0");
  hp.set_accel(schedule_accel_params(hp.eta, hp.mu_hint));
  return hp;
}

/// Parallel SGD, naive sparsified SGD, top-k EF, or S-SGD-EF.
inline Trace run_sgd_family(const Problem& problem, const RunSpec& spec) {
  if (is_accelerated(spec.method)) throw std::invalid_argument("run_sgd_family: wrong method");
  validate(spec.hp, problem.dim());
  Trace trace;
  detail::Recorder rec(problem, spec, spec.hp.T, trace);
  SgdEfState state = make_sgd_ef_state(detail::initial_point(problem, spec), problem.workers());
  rec.observe(0, state.x, state.mem_avg);
  if (spec.method == Method::topk_ef) {
    const TopKSparsifier s;
    detail::drive_sgd(problem, spec, state, &s, rec, trace);
  } else {
    const RandCompSparsifier s{spec.sampling};
    detail::drive_sgd(problem, spec, state, &s, rec, trace);
  }
  detail::choose_output(problem, spec, trace);
  return trace;
}

/// Deterministic-schedule NAG with stochastic gradients, or S-SNAG-EF.
inline Trace run_snag_family(const Problem& problem, const RunSpec& spec) {
  if (spec.method != Method::snag && spec.method != Method::s_snag_ef)
    throw std::invalid_argument("run_snag_family: wrong method");
  const HyperParams hp = resolve_accel(spec.hp);
  validate(hp, problem.dim());
  Trace trace;
  detail::Recorder rec(problem, spec, hp.T, trace);
  SnagEfState state = make_snag_ef_state(detail::initial_point(problem, spec), problem.workers());
  rec.observe(0, state.x, state.mem_avg);
  if (spec.method == Method::snag || spec.full_precision)
    detail::drive_snag(problem, spec, hp, state, DenseSparsifier{}, rec, trace);
  else
    detail::drive_snag(problem, spec, hp, state, RandCompSparsifier{spec.sampling}, rec, trace);
  detail::choose_output(problem, spec, trace);
  return trace;
}

/// Recursively regularized S-SNAG-EF. Stage s runs T rounds on
/// F + sigma ||x - x_{s-1}||^2 from x_{s-1} with fresh memories, using the
/// schedule for that stage's strong-convexity constant. Rounds are numbered
/// globally so every stage draws from distinct random streams.
inline Trace reg_s_snag_ef(const Problem& problem, const RunSpec& spec) {
  const HyperParams& hp = spec.hp;
  if (!(hp.sigma > 0.0)) throw std::invalid_argument("reg_s_snag_ef: sigma must be > 0");
  if (hp.S == 0) throw std::invalid_argument("reg_s_snag_ef: S must be >= 1");
  Trace trace;
  detail::Recorder rec(problem, spec, hp.S * hp.T, trace);
  Vec x = detail::initial_point(problem, spec);
  rec.observe(0, x, {});
  double f_prev = problem.value(x);
  for (std::size_t s = 1; s <= hp.S; ++s) {
    const Problem stage = regularize(problem, hp.sigma, x);
    HyperParams stage_hp = hp;
    stage_hp.lambda = 0.0;
    stage_hp.mu_hint = stage.mu();
    stage_hp = resolve_accel(stage_hp);
    validate(stage_hp, problem.dim());
    SnagEfState state = make_snag_ef_state(x, problem.workers());
    state.t = (s - 1) * hp.T;
    if (spec.full_precision)
      detail::drive_snag(stage, spec, stage_hp, state, DenseSparsifier{}, rec, trace);
    else
      detail::drive_snag(stage, spec, stage_hp, state, RandCompSparsifier{spec.sampling}, rec,
                         trace);
    x = state.x;

    StageRecord sr;
    sr.s = s;
    sr.loss = problem.value(x);
    sr.grad_norm_sq = norm_sq(problem.full_grad(x));
    sr.inner_grad_norm_sq = norm_sq(stage.full_grad(x));
    const double drop = f_prev - sr.loss;
    sr.descent_lhs = sr.grad_norm_sq;
    sr.descent_rhs = 4.0 * sr.inner_grad_norm_sq + 4.0 * problem.L() * drop;
    sr.descent_rhs_strict = 6.0 * sr.inner_grad_norm_sq + 8.0 * problem.L() * drop;
    trace.stages.push_back(sr);
    trace.stage_iterates.push_back({s, x});
    f_prev = sr.loss;
  }
  detail::choose_output(problem, spec, trace);
  return trace;
}

/// Baselines: parallel_sgd, naive_sparse, topk_ef, snag (full-precision
/// accelerated rounds with the same seed discipline).
inline Trace run_baseline(Method kind, const Problem& problem, const RunSpec& spec) {
  RunSpec s = spec;
  s.method = kind;
  switch (kind) {
    case Method::parallel_sgd:
    case Method::naive_sparse:
    case Method::topk_ef:
      return run_sgd_family(problem, s);
    case Method::snag:
      return run_snag_family(problem, s);
    default:
      throw std::invalid_argument(std::string("run_baseline: not a baseline: ") +
                                  method_name(kind));
  }
}

inline Trace run(const Problem& problem, const RunSpec& spec) {
  switch (spec.method) {
    case Method::parallel_sgd:
    case Method::naive_sparse:
    case Method::topk_ef:
    case Method::s_sgd_ef:
      return run_sgd_family(problem, spec);
    case Method::snag:
    case Method::s_snag_ef:
      return run_snag_family(problem, spec);
    case Method::reg_s_snag_ef:
      return reg_s_snag_ef(problem, spec);
  }
  throw std::invalid_argument("run: unknown method");
}

}  // namespace sparsefeed
