#pragma once

// Per-round transitions of the synchronous methods. Each round function takes
// a state by value and returns the successor state together with the messages
// the workers put on the wire during that round.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sparsefeed/compression.hpp"
#include "sparsefeed/linalg.hpp"
#include "sparsefeed/objectives.hpp"
#include "sparsefeed/random.hpp"
#include "sparsefeed/trace.hpp"

namespace sparsefeed {

/// Base of the conservative step in OneIterNAG.
///   mixed:    y' = x - dy   (the incoming mixture; accelerated three-sequence NAG)
///   previous: y' = y - dy   (previous conservative iterate)
enum class NagForm { mixed, previous };

/// Which memory enters the beta-term of the z-correction.
///   paper:    (1-beta) m^(z) + beta m
///   y_memory: (1-beta) m^(z) + beta m^(y)
enum class ZCorrection { paper, y_memory };

enum class GradientMode { stochastic, full_batch };

/// One OneIterNAG transition, in place:
///   y' = base - dy,  z' = (1-beta) z + beta x - dz,  x' = (1-alpha) y' + alpha z'
/// where x on the right-hand side is the incoming x.
inline void one_iter_nag(std::span<double> x, std::span<double> y, std::span<double> z,
                         std::span<const double> dy, std::span<const double> dz, double alpha,
                         double beta, NagForm form = NagForm::mixed) {
  const std::size_t d = x.size();
  if (y.size() != d || z.size() != d || dy.size() != d || dz.size() != d)
    throw std::invalid_argument("one_iter_nag: dimension mismatch");
  for (std::size_t j = 0; j < d; ++j) {
    const double x_in = x[j];
    y[j] = (form == NagForm::mixed ? x_in : y[j]) - dy[j];
    z[j] = (1.0 - beta) * z[j] + beta * x_in - dz[j];
    x[j] = (1.0 - alpha) * y[j] + alpha * z[j];
  }
}

struct NagTriple {
  Vec x, y, z;
};

inline NagTriple one_iter_nag(NagTriple s, std::span<const double> dy, std::span<const double> dz,
                              double alpha, double beta, NagForm form = NagForm::mixed) {
  one_iter_nag(s.x, s.y, s.z, dy, dz, alpha, beta, form);
  return s;
}

struct AccelParams {
  double lambda = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

/// lambda = sqrt(eta/mu)/2, alpha = lambda mu/(2 + lambda mu),
/// beta = lambda mu/(1 + lambda mu).
inline AccelParams schedule_accel_params(double eta, double mu) {
  if (!(eta > 0.0)) throw std::invalid_argument("schedule_accel_params: eta must be > 0");
  if (!(mu > 0.0))
    throw std::invalid_argument("schedule_accel_params: mu must be > 0 for the accelerated method");
  AccelParams a;
  a.lambda = 0.5 * std::sqrt(eta / mu);
  const double lm = a.lambda * mu;
  a.alpha = lm / (2.0 + lm);
  a.beta = lm / (1.0 + lm);
  // alpha lambda / (1 - beta) <= eta / 4 holds identically for this schedule.
  if (a.alpha * a.lambda / (1.0 - a.beta) > eta / 4.0 * (1.0 + 1e-12))
    throw std::logic_error("schedule_accel_params: alpha*lambda/(1-beta) <= eta/4 violated");
  return a;
}

struct HyperParams {
  double eta = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  std::size_t k = 1;
  double mu_hint = 0.0;
  double sigma = 0.0;
  std::size_t T = 0;
  std::size_t S = 1;

  void set_accel(const AccelParams& a) {
    lambda = a.lambda;
    alpha = a.alpha;
    beta = a.beta;
  }
};

inline void validate(const HyperParams& hp, std::size_t d) {
  if (!(hp.eta > 0.0)) throw std::invalid_argument("hyperparameters: eta must be > 0");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(hp.alpha) || !unit(hp.beta) || !unit(hp.gamma))
    throw std::invalid_argument("hyperparameters: alpha, beta, gamma must lie in [0, 1]");
  check_budget(hp.k, d);
}

struct RoundOptions {
  GradientMode gradient = GradientMode::stochastic;
  ZCorrection z_correction = ZCorrection::paper;
  NagForm nag_form = NagForm::mixed;
  // Order in which workers are evaluated; empty means 0..P-1. Results are
  // always combined in worker-index order.
  std::vector<std::size_t> worker_order;
  unsigned threads = 1;
};

struct SgdEfState {
  Vec x;
  std::vector<Vec> mem;
  Vec mem_avg;  // maintained aggregate (1/P) sum_p m_{t,p}
  std::size_t t = 0;
};

inline SgdEfState make_sgd_ef_state(std::span<const double> x0, std::size_t P) {
  SgdEfState s;
  s.x.assign(x0.begin(), x0.end());
  s.mem.assign(P, Vec(x0.size(), 0.0));
  s.mem_avg.assign(x0.size(), 0.0);
  return s;
}

struct SnagEfState {
  Vec x, y, z;
  std::vector<Vec> mem, mem_y, mem_z;
  Vec mem_avg, mem_y_avg, mem_z_avg;
  std::size_t t = 0;
};

inline SnagEfState make_snag_ef_state(std::span<const double> x0, std::size_t P) {
  SnagEfState s;
  s.x.assign(x0.begin(), x0.end());
  s.y = s.x;
  s.z = s.x;
  const Vec zero(x0.size(), 0.0);
  s.mem.assign(P, zero);
  s.mem_y.assign(P, zero);
  s.mem_z.assign(P, zero);
  s.mem_avg = s.mem_y_avg = s.mem_z_avg = zero;
  return s;
}

/// What one round put on the wire, plus the uncompressed averaged gradient at
/// the pre-round iterate (input to the shadow trajectory).
struct RoundReport {
  std::vector<CompressedMessage> messages;  // y-channel messages first, then z-channel
  std::size_t channels = 1;
  Vec raw_grad_mean;
  std::size_t comm_raw = 0;
  std::size_t comm_capped = 0;
};

template <class State>
struct RoundResult {
  State state;
  RoundReport report;
};

namespace detail {

inline std::vector<std::size_t> worker_sequence(std::size_t P, const RoundOptions& opt) {
  if (opt.worker_order.empty()) {
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
  }
  std::vector<std::size_t> sorted = opt.worker_order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t p = 0; p < P; ++p)
    if (sorted.size() != P || sorted[p] != p)
      throw std::invalid_argument("worker_order must be a permutation of 0..P-1");
  return opt.worker_order;
}

/// Runs fn(p) for every worker. Each call must only touch worker-p state.
template <class Fn>
void for_each_worker(std::size_t P, const RoundOptions& opt, Fn&& fn) {
  const auto order = worker_sequence(P, opt);
  const unsigned threads = std::min<unsigned>(std::max(1u, opt.threads), static_cast<unsigned>(P));
  if (threads <= 1) {
    for (std::size_t p : order) fn(p);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t a = w; a < order.size(); a += threads) fn(order[a]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

inline void worker_gradient(const Problem& problem, std::size_t p, std::span<const double> x,
                            std::size_t t, const StreamFactory& streams, GradientMode mode,
                            std::span<double> out) {
  if (mode == GradientMode::full_batch) {
    problem.partition_grad_into(p, x, out);
    return;
  }
  Stream rng = streams.stream(t, p, Channel::sample);
  problem.sample_grad_into(p, sample_index(problem, p, rng), x, out);
}

inline Vec average(const std::vector<Vec>& vs) {
  Vec out(vs.front().size(), 0.0);
  for (const Vec& v : vs) axpy(1.0, v, out);
  scale(1.0 / static_cast<double>(vs.size()), out);
  return out;
}

inline Vec average_messages(std::span<const CompressedMessage> msgs, std::size_t d) {
  Vec out(d, 0.0);
  for (const CompressedMessage& m : msgs) accumulate(m, out);
  scale(1.0 / static_cast<double>(msgs.size()), out);
  return out;
}

inline void meter(RoundReport& report, std::size_t P, std::size_t d) {
  report.comm_raw = 0;
  report.comm_capped = 0;
  for (std::size_t c = 0; c < report.channels; ++c) {
    std::size_t channel_total = 0;
    for (std::size_t p = 0; p < P; ++p) channel_total += wire_entries(report.messages[c * P + p]);
    report.comm_raw += channel_total;
    report.comm_capped += std::min(channel_total, d);
  }
}

inline void check_state(const Problem& problem, std::span<const double> x,
                        const std::vector<Vec>& mem) {
  if (x.size() != problem.dim()) throw std::invalid_argument("round: iterate dimension mismatch");
  if (mem.size() != problem.workers())
    throw std::invalid_argument("round: memory count does not match P");
}

}  // namespace detail

/// Non-compressed synchronous SGD: x_t = x_{t-1} - eta * mean_p grad f_{i,p}(x_{t-1}).
inline RoundResult<SgdEfState> parallel_sgd_round(const Problem& problem, SgdEfState state,
                                                  const HyperParams& hp,
                                                  const StreamFactory& streams,
                                                  const RoundOptions& opt = {}) {
  detail::check_state(problem, state.x, state.mem);
  const std::size_t d = problem.dim(), P = problem.workers(), t = state.t + 1;
  std::vector<Vec> grads(P, Vec(d));
  detail::for_each_worker(P, opt, [&](std::size_t p) {
    detail::worker_gradient(problem, p, state.x, t, streams, opt.gradient, grads[p]);
  });
  RoundReport report;
  report.raw_grad_mean = detail::average(grads);
  for (std::size_t j = 0; j < d; ++j) state.x[j] -= hp.eta * report.raw_grad_mean[j];
  report.messages.reserve(P);
  for (const Vec& g : grads) report.messages.push_back(full_message(g));
  detail::meter(report, P, d);
  state.t = t;
  return {std::move(state), std::move(report)};
}

/// Sparsified SGD without error feedback: RandComp messages, no memory.
inline RoundResult<SgdEfState> naive_sparse_round(const Problem& problem, SgdEfState state,
                                                  const HyperParams& hp,
                                                  const StreamFactory& streams,
                                                  const RoundOptions& opt = {},
                                                  Sampling sampling = Sampling::without_replacement) {
  detail::check_state(problem, state.x, state.mem);
  const std::size_t d = problem.dim(), P = problem.workers(), t = state.t + 1;
  check_budget(hp.k, d);
  std::vector<Vec> grads(P, Vec(d));
  std::vector<CompressedMessage> msgs(P);
  detail::for_each_worker(P, opt, [&](std::size_t p) {
    detail::worker_gradient(problem, p, state.x, t, streams, opt.gradient, grads[p]);
    Stream rng = streams.stream(t, p, Channel::subset_y);
    msgs[p] = rand_comp(grads[p], hp.k, rng, sampling);
  });
  RoundReport report;
  report.raw_grad_mean = detail::average(grads);
  const Vec agg = detail::average_messages(msgs, d);
  for (std::size_t j = 0; j < d; ++j) state.x[j] -= hp.eta * agg[j];
  report.messages = std::move(msgs);
  detail::meter(report, P, d);
  state.t = t;
  return {std::move(state), std::move(report)};
}

/// One round of sparsified SGD with error feedback:
///   g = grad f + (gamma/eta) m;  msg = compress(g, k);  m += eta (grad f - msg);
///   x -= eta * mean_p msg_p.
template <class Sparsifier>
RoundResult<SgdEfState> s_sgd_ef_round(const Problem& problem, SgdEfState state,
                                       const HyperParams& hp, const StreamFactory& streams,
                                       const Sparsifier& sparsify, const RoundOptions& opt = {}) {
  detail::check_state(problem, state.x, state.mem);
  const std::size_t d = problem.dim(), P = problem.workers(), t = state.t + 1;
  check_budget(hp.k, d);
  const double feedback = hp.gamma / hp.eta;
  std::vector<Vec> grads(P, Vec(d));
  std::vector<CompressedMessage> msgs(P);
  detail::for_each_worker(P, opt, [&](std::size_t p) {
    Vec& grad = grads[p];
    Vec& m = state.mem[p];
    detail::worker_gradient(problem, p, state.x, t, streams, opt.gradient, grad);
    Vec g(d);
    for (std::size_t j = 0; j < d; ++j) g[j] = grad[j] + feedback * m[j];
    const MessageTag tag{t, p, Channel::subset_y};
    Stream rng = streams.stream(t, p, tag.channel);
    msgs[p] = sparsify(std::span<const double>(g), hp.k, tag, rng);
    const Vec sent = densify(msgs[p]);
    for (std::size_t j = 0; j < d; ++j) m[j] += hp.eta * (grad[j] - sent[j]);
  });
  RoundReport report;
  report.raw_grad_mean = detail::average(grads);
  const Vec agg = detail::average_messages(msgs, d);
  for (std::size_t j = 0; j < d; ++j) {
    state.x[j] -= hp.eta * agg[j];
    state.mem_avg[j] += hp.eta * (report.raw_grad_mean[j] - agg[j]);
  }
  report.messages = std::move(msgs);
  detail::meter(report, P, d);
  state.t = t;
  return {std::move(state), std::move(report)};
}

/// Coordinates kept by the y- and z-messages: floor(k/2) and ceil(k/2).
inline std::pair<std::size_t, std::size_t> split_budget(std::size_t k) {
  if (k < 2) throw std::invalid_argument("accelerated method needs k >= 2");
  return {k / 2, k - k / 2};
}

/// One round of the accelerated method with error feedback. Every worker sends
/// a y-message and a z-message compressed independently; worker memories and
/// the solutions advance through the same OneIterNAG transition.
///
/// Pass a DenseSparsifier for the full-precision variant.
template <class Sparsifier>
RoundResult<SnagEfState> s_snag_ef_round(const Problem& problem, SnagEfState state,
                                         const HyperParams& hp, const StreamFactory& streams,
                                         const Sparsifier& sparsify,
                                         const RoundOptions& opt = {}) {
  detail::check_state(problem, state.x, state.mem);
  const std::size_t d = problem.dim(), P = problem.workers(), t = state.t + 1;
  check_budget(hp.k, d);
  const auto [k_y, k_z] = split_budget(hp.k);
  if (!(hp.lambda > 0.0)) throw std::invalid_argument("s_snag_ef_round: lambda must be > 0");
  const double feedback_y = hp.gamma / hp.eta;
  const double feedback_z = hp.gamma / hp.lambda;
  const double alpha = hp.alpha, beta = hp.beta;

  std::vector<Vec> grads(P, Vec(d));
  std::vector<CompressedMessage> msgs(2 * P);
  detail::for_each_worker(P, opt, [&](std::size_t p) {
    Vec& grad = grads[p];
    Vec& m = state.mem[p];
    Vec& my = state.mem_y[p];
    Vec& mz = state.mem_z[p];
    detail::worker_gradient(problem, p, state.x, t, streams, opt.gradient, grad);
    const Vec& mixed = opt.z_correction == ZCorrection::paper ? m : my;
    Vec gy(d), gz(d);
    for (std::size_t j = 0; j < d; ++j) {
      gy[j] = grad[j] + feedback_y * m[j];
      gz[j] = grad[j] + feedback_z * ((1.0 - beta) * mz[j] + beta * mixed[j]);
    }
    const MessageTag tag_y{t, p, Channel::subset_y}, tag_z{t, p, Channel::subset_z};
    Stream rng_y = streams.stream(t, p, tag_y.channel);
    Stream rng_z = streams.stream(t, p, tag_z.channel);
    msgs[p] = sparsify(std::span<const double>(gy), k_y, tag_y, rng_y);
    msgs[P + p] = sparsify(std::span<const double>(gz), k_z, tag_z, rng_z);
    const Vec sent_y = densify(msgs[p]);
    const Vec sent_z = densify(msgs[P + p]);
    Vec dy(d), dz(d);
    for (std::size_t j = 0; j < d; ++j) {
      dy[j] = hp.eta * (sent_y[j] - grad[j]);
      dz[j] = hp.lambda * (sent_z[j] - grad[j]);
    }
    one_iter_nag(m, my, mz, dy, dz, alpha, beta, opt.nag_form);
  });

  RoundReport report;
  report.channels = 2;
  report.raw_grad_mean = detail::average(grads);
  const Vec agg_y = detail::average_messages(std::span(msgs).first(P), d);
  const Vec agg_z = detail::average_messages(std::span(msgs).subspan(P), d);
  Vec step_y(d), step_z(d), mem_dy(d), mem_dz(d);
  for (std::size_t j = 0; j < d; ++j) {
    step_y[j] = hp.eta * agg_y[j];
    step_z[j] = hp.lambda * agg_z[j];
    mem_dy[j] = hp.eta * (agg_y[j] - report.raw_grad_mean[j]);
    mem_dz[j] = hp.lambda * (agg_z[j] - report.raw_grad_mean[j]);
  }
  one_iter_nag(state.x, state.y, state.z, step_y, step_z, alpha, beta, opt.nag_form);
  one_iter_nag(state.mem_avg, state.mem_y_avg, state.mem_z_avg, mem_dy, mem_dz, alpha, beta,
               opt.nag_form);
  report.messages = std::move(msgs);
  detail::meter(report, P, d);
  state.t = t;
  return {std::move(state), std::move(report)};
}

/// Deterministic three-sequence NAG on the full gradient. Returns x_0..x_T.
struct NagRun {
  std::vector<Vec> xs;
  Vec y_final;
};

inline NagRun nag(const Problem& problem, std::span<const double> x_in, double eta,
                  const AccelParams& accel, std::size_t T, NagForm form = NagForm::mixed) {
  const std::size_t d = problem.dim();
  Vec x(x_in.begin(), x_in.end()), y = x, z = x, g(d), dy(d), dz(d);
  NagRun run;
  run.xs.reserve(T + 1);
  run.xs.push_back(x);
  for (std::size_t t = 1; t <= T; ++t) {
    problem.full_grad_into(x, g);
    for (std::size_t j = 0; j < d; ++j) {
      dy[j] = eta * g[j];
      dz[j] = accel.lambda * g[j];
    }
    one_iter_nag(x, y, z, dy, dz, accel.alpha, accel.beta, form);
    run.xs.push_back(x);
  }
  run.y_final = y;
  return run;
}

// ---------------------------------------------------------------------------
// Output selection.

enum class OutputRule { last, geometric, uniform };

/// Selection probabilities over stored iterates:
///   last:      all mass on the final entry;
///   geometric: proportional to (1 - eta_mu)^(-t);
///   uniform:   1/n each.
inline Vec output_weights(std::span<const StoredIterate> iterates, OutputRule rule,
                          double eta_mu = 0.0) {
  if (iterates.empty()) throw std::invalid_argument("select_output: empty trace");
  const std::size_t n = iterates.size();
  Vec w(n, 0.0);
  switch (rule) {
    case OutputRule::last:
      w.back() = 1.0;
      return w;
    case OutputRule::uniform:
      std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
      return w;
    case OutputRule::geometric: {
      if (!(eta_mu >= 0.0) || eta_mu >= 1.0)
        throw std::invalid_argument("select_output: geometric rule needs 0 <= eta*mu < 1");
      // log weight is -t log(1 - eta mu); normalize by the largest before summing.
      const double rate = -std::log1p(-eta_mu);
      std::size_t t_max = 0;
      for (const auto& it : iterates) t_max = std::max(t_max, it.t);
      double total = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        const double rel = (static_cast<double>(iterates[a].t) - static_cast<double>(t_max)) * rate;
        w[a] = std::exp(rel);
        total += w[a];
      }
      scale(1.0 / total, w);
      return w;
    }
  }
  throw std::invalid_argument("select_output: unknown rule");
}

/// Index of the selected stored iterate.
inline std::size_t select_output(std::span<const StoredIterate> iterates, OutputRule rule,
                                 Stream& rng, double eta_mu = 0.0) {
  const Vec w = output_weights(iterates, rule, eta_mu);
  if (rule == OutputRule::last) return iterates.size() - 1;
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t a = 0; a < w.size(); ++a) {
    acc += w[a];
    if (u < acc) return a;
  }
  return w.size() - 1;
}

/// Largest |maintained aggregate - recomputed mean of worker memories|.
inline double memory_average_error(const std::vector<Vec>& mem, std::span<const double> avg) {
  const Vec recomputed = detail::average(mem);
  double worst = 0.0;
  for (std::size_t j = 0; j < avg.size(); ++j)
    worst = std::max(worst, std::abs(recomputed[j] - avg[j]));
  return worst;
}

}  // namespace sparsefeed
