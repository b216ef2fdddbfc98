#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sparsefeed/sparsefeed.hpp"

using namespace sparsefeed;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string details;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string secs(double s) { return num(s) + " s"; }

HyperParams ef_params(double eta, double gamma, std::size_t k) {
  HyperParams hp;
  hp.eta = eta;
  hp.gamma = gamma;
  hp.k = k;
  return hp;
}

HyperParams accel_params(double eta, double mu, double gamma, std::size_t k) {
  HyperParams hp = ef_params(eta, gamma, k);
  hp.mu_hint = mu;
  hp.set_accel(schedule_accel_params(eta, mu));
  return hp;
}

// Shadow identity on the seed-7 quadratic.
Outcome shadow_identity() {
  const Clock clock;
  const Problem p = make_quadratic(50, 10.0, 0.1, 20, 8, 7);
  Outcome out{true, {}};
  for (Method m : {Method::s_sgd_ef, Method::s_snag_ef}) {
    RunSpec s;
    s.method = m;
    s.hp = m == Method::s_snag_ef ? accel_params(0.005, 0.1, 0.05, 5) : ef_params(0.005, 0.05, 5);
    s.hp.T = 1000;
    s.seed = 1;
    s.shadow = true;
    s.x0 = Vec(50, 1.0);
    double err = std::numeric_limits<double>::infinity();
    try {
      err = run(p, s).max_shadow_error;
    } catch (const ShadowViolation& e) {
      out.details += std::string(e.what()) + "; ";
    }
    const bool ok = err >= 0.0 && err <= kShadowTolerance;
    out.passed = out.passed && ok;
    out.details += std::string(method_name(m)) + " max rel err " + num(err) + "; ";
  }
  const double t = clock.seconds();
  out.passed = out.passed && t < 5.0;
  out.details += "runtime " + secs(t);
  return out;
}

// Second moment by enumeration and by Monte Carlo.
Outcome compressor_exactness() {
  const Clock clock;
  Stream rng(2);
  Outcome out{true, {}};
  double worst = 0.0;
  for (std::size_t d = 1; d <= 6; ++d)
    for (std::size_t k = 1; k <= d; ++k) {
      const CheckReport rep = check_second_moment(k, d, rng);
      worst = std::max(worst, rep.statistic);
      out.passed = out.passed && rep.passed && rep.statistic <= 1e-12;
    }
  const CheckReport mc = check_second_moment(10, 1000, rng, 100000);
  out.passed = out.passed && mc.passed && mc.threshold == 3.0;
  const double t = clock.seconds();
  out.passed = out.passed && t < 10.0;
  out.details = "enumeration worst rel err " + num(worst) + "; Monte Carlo |z| " +
                num(mc.statistic) + " < " + num(mc.threshold) + "; runtime " + secs(t);
  return out;
}

Outcome unbiasedness_and_uniformity() {
  Stream rng(3);
  const Vec x = probe_vector(100);
  const CheckReport unb = check_unbiasedness(x, 10, 100000, rng);
  const CheckReport uni = check_subset_uniformity(8, 3, 100000, rng);
  const CheckReport topk = check_unbiasedness(x, 10, 100000, rng, top_k_compressor());
  Outcome out;
  out.passed = unb.passed && uni.passed && !topk.passed && unb.threshold == 4.0 &&
               uni.threshold == 4.0;
  out.details = "unbiased max|z| " + num(unb.statistic) + ", subsets max|z| " +
                num(uni.statistic) + ", top_k control " + (topk.passed ? "passed" : "failed") +
                " (|z| " + num(topk.statistic) + ")";
  return out;
}

Outcome reductions() {
  Outcome out{true, {}};
  const Problem p = make_quadratic(50, 10.0, 0.1, 20, 8, 7);
  const StreamFactory streams(4);
  const HyperParams hp = ef_params(0.005, 0.05, 50);

  auto bitwise_sgd = [&](auto sparsifier) {
    SgdEfState ef = make_sgd_ef_state(Vec(50, 1.0), 8), plain = ef;
    for (std::size_t t = 1; t <= 500; ++t) {
      ef = s_sgd_ef_round(p, std::move(ef), hp, streams, sparsifier).state;
      plain = parallel_sgd_round(p, std::move(plain), hp, streams).state;
      if (ef.x != plain.x) return t;
    }
    return std::size_t{0};
  };
  const std::size_t rand_diverge = bitwise_sgd(RandCompSparsifier{});
  const std::size_t topk_diverge = bitwise_sgd(TopKSparsifier{});
  out.passed = rand_diverge == 0 && topk_diverge == 0;
  const auto verdict = [](std::size_t t) {
    return t ? "differs at round " + std::to_string(t) : std::string("bitwise");
  };
  out.details = "rand k=d " + verdict(rand_diverge) + ", top_k k=d " + verdict(topk_diverge);

  const HyperParams ahp = accel_params(0.005, 0.1, 0.05, 5);
  RoundOptions opt;
  opt.gradient = GradientMode::full_batch;
  const Vec x0(50, 1.0);
  const NagRun ref = nag(p, x0, ahp.eta, {ahp.lambda, ahp.alpha, ahp.beta}, 500);
  SnagEfState s = make_snag_ef_state(x0, 8);
  std::size_t nag_diverge = 0;
  for (std::size_t t = 1; t <= 500 && nag_diverge == 0; ++t) {
    s = s_snag_ef_round(p, std::move(s), ahp, streams, DenseSparsifier{}, opt).state;
    if (s.x != ref.xs[t]) nag_diverge = t;
  }
  out.passed = out.passed && nag_diverge == 0;
  out.details += ", full-precision accelerated vs NAG " + verdict(nag_diverge);

  const CheckReport mom = check_nag_equivalence(p, 0.005, 0.1, 100);
  out.passed = out.passed && mom.passed && mom.threshold <= 1e-8;
  out.details += ", momentum form rel err " + num(mom.statistic);
  return out;
}

Outcome orthogonality() {
  const Clock clock;
  const Problem p = make_quadratic(50, 10.0, 0.1, 20, 2, 7);
  const std::size_t times[] = {1, 5, 20};
  const CheckReport a =
      check_memory_orthogonality(Method::s_sgd_ef, p, ef_params(0.02, 0.05, 5), times, 2000, 1);
  const CheckReport b = check_memory_orthogonality(
      Method::s_snag_ef, p, accel_params(0.02, 0.1, 0.05, 5), times, 2000, 1);
  const double t = clock.seconds();
  Outcome out;
  out.passed = a.passed && b.passed && a.threshold == 4.0 && b.threshold == 4.0 && t < 60.0;
  out.details = "s_sgd_ef max|z| " + num(a.statistic) + ", s_snag_ef max|z| " +
                num(b.statistic) + "; runtime " + secs(t);
  return out;
}

Outcome memory_scaling() {
  const Problem single = make_quadratic(50, 1.0, 0.1, 64, 1, 7);
  const Problem many = make_quadratic(50, 1.0, 0.1, 4, 16, 7);
  const HyperParams hp = ef_params(0.02, 0.05, 5);
  const CheckReport scale =
      check_memory_scaling(Method::s_sgd_ef, single, many, hp, 400, 500, 1, 1.0 / 32, 1.0 / 8);
  HyperParams raw = hp;
  raw.gamma = 0.0;
  const CheckReport control = check_memory_bound(Method::s_sgd_ef, single, raw, 400, 500, 1);
  Outcome out;
  out.passed = scale.passed && !control.passed;
  out.details = "P=16/P=1 plateau ratio " + num(scale.statistic) +
                " in [1/32, 1/8]; gamma=0 growth " + num(control.statistic) + " (" +
                (control.passed ? "bounded" : "unbounded") + ")";
  return out;
}

// Mean suboptimality curve over consecutive seeds, one entry per logged round.
Vec mean_gap_curve(const Problem& p, Method m, double eta, std::size_t T, std::size_t repeats) {
  const double f_star = p.optimum()->value;
  Vec curve;
  for (std::size_t r = 0; r < repeats; ++r) {
    RunSpec s;
    s.method = m;
    s.hp = ef_params(eta, 0.05, 10);
    s.hp.T = T;
    s.log_every = 10;
    s.seed = 1 + r;
    Trace tr;
    try {
      tr = run(p, s);
    } catch (const std::exception&) {
      return Vec(T / 10 + 1, std::numeric_limits<double>::infinity());
    }
    if (curve.empty()) curve.assign(tr.records.size(), 0.0);
    for (std::size_t j = 0; j < tr.records.size(); ++j) {
      const double gap = tr.records[j].loss - f_star;
      curve[j] += std::isfinite(gap) ? gap / static_cast<double>(repeats)
                                     : std::numeric_limits<double>::infinity();
    }
  }
  return curve;
}

long first_below(const Vec& curve, double target) {
  for (std::size_t j = 0; j < curve.size(); ++j)
    if (curve[j] <= target) return static_cast<long>(j * 10);
  return -1;
}

Outcome convex_quality() {
  const Clock clock;
  const Problem p = make_quadratic(100, 10.0, 0.1, 50, 8, 7, 0.35);
  const std::size_t T = 80000, repeats = 4;
  double best_eta = 0.0, best_final = std::numeric_limits<double>::infinity();
  Vec ef;
  for (double eta : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
    Vec c = mean_gap_curve(p, Method::s_sgd_ef, eta, T, repeats);
    if (std::isfinite(c.back()) && c.back() < best_final) {
      best_final = c.back();
      best_eta = eta;
      ef = std::move(c);
    }
  }
  Outcome out;
  if (ef.empty()) {
    out.details = "no stable step size on the grid";
    return out;
  }
  const Vec psgd = mean_gap_curve(p, Method::parallel_sgd, best_eta, T, repeats);
  const Vec naive = mean_gap_curve(p, Method::naive_sparse, best_eta, T, repeats);
  const long hit_psgd = first_below(psgd, 1e-3), hit_ef = first_below(ef, 1e-3);
  out.details = "eta " + num(best_eta) + "; hits: parallel_sgd " + std::to_string(hit_psgd) +
                ", s_sgd_ef " + std::to_string(hit_ef);
  if (hit_psgd < 0 || hit_ef < 0) {
    out.details += " (target not reached)";
    return out;
  }
  const std::size_t at = std::min<std::size_t>(2 * static_cast<std::size_t>(hit_psgd) / 10,
                                               ef.size() - 1);
  const double ratio = naive[at] / ef[at];
  const double t = clock.seconds();
  out.passed = hit_ef <= 2 * hit_psgd && ratio >= 5.0 && t < 120.0;
  out.details += "; at round " + std::to_string(at * 10) + " gap s_sgd_ef " + num(ef[at]) +
                 " vs naive_sparse " + num(naive[at]) + " (ratio " + num(ratio) +
                 "); runtime " + secs(t);
  return out;
}

// Full-batch rounds until F - F* <= target; -1 if never within the cap.
template <class Step>
long rounds_to_target(const Problem& p, double target, std::size_t cap, Step&& step) {
  const double f_star = p.optimum()->value;
  for (std::size_t t = 1; t <= cap; ++t) {
    const Vec& x = step();
    const double gap = p.value(x) - f_star;
    if (!std::isfinite(gap) || gap > 1e12) return -1;
    if (gap <= target) return static_cast<long>(t);
  }
  return -1;
}

Outcome acceleration() {
  const Problem p = make_quadratic(50, 1.0, 1e-4, 10, 4, 7, 0.0);
  const Vec x0(50, 1.0);
  const StreamFactory streams(3);
  RoundOptions opt;
  opt.gradient = GradientMode::full_batch;
  const std::size_t cap = 200000;

  const HyperParams ahp = accel_params(0.1, 1e-4, 0.1, 10);
  SnagEfState snag = make_snag_ef_state(x0, 4);
  const long snag_hit = rounds_to_target(p, 1e-6, cap, [&]() -> const Vec& {
    snag = s_snag_ef_round(p, std::move(snag), ahp, streams, RandCompSparsifier{}, opt).state;
    return snag.x;
  });

  long best_hit = -1;
  double best_eta = 0.0;
  for (int i = 1; i <= 20; ++i) {
    const double eta = 0.1 * i;
    const HyperParams hp = ef_params(eta, 0.1, 10);
    SgdEfState s = make_sgd_ef_state(x0, 4);
    const long hit = rounds_to_target(p, 1e-6, cap, [&]() -> const Vec& {
      s = s_sgd_ef_round(p, std::move(s), hp, streams, RandCompSparsifier{}, opt).state;
      return s.x;
    });
    if (hit > 0 && (best_hit < 0 || hit < best_hit)) {
      best_hit = hit;
      best_eta = eta;
    }
  }
  Outcome out;
  out.passed = snag_hit > 0 && (best_hit < 0 || snag_hit < best_hit);
  out.details = "s_snag_ef " + std::to_string(snag_hit) + " rounds; s_sgd_ef best " +
                std::to_string(best_hit) + " rounds at eta " + num(best_eta);
  return out;
}

Outcome nonconvex_wrapper() {
  const Problem p = make_nonconvex(50, 100, 4, 7);
  RunSpec s;
  s.method = Method::reg_s_snag_ef;
  s.hp = ef_params(1e-3, 0.05, 5);
  s.hp.sigma = p.L();
  s.hp.S = 50;
  s.hp.T = 100;
  s.seed = 1;
  s.x0 = Vec(50, 1.0);
  const Trace main_run = run(p, s);
  double best = std::numeric_limits<double>::infinity();
  for (const StageRecord& st : main_run.stages) best = std::min(best, st.grad_norm_sq);

  s.full_precision = true;
  s.round.gradient = GradientMode::full_batch;
  const Trace control = run(p, s);
  const auto holds = std::count_if(control.stages.begin(), control.stages.end(),
                                   [](const StageRecord& st) { return st.descent_holds(); });
  Outcome out;
  out.passed = main_run.stages.size() == 50 && best < 1e-3 &&
               static_cast<std::size_t>(holds) == control.stages.size() &&
               !control.stages.empty();
  out.details = "min_s ||grad F||^2 " + num(best) + " over " +
                std::to_string(main_run.stages.size()) + " stages; descent holds " +
                std::to_string(holds) + "/" + std::to_string(control.stages.size());
  return out;
}

Outcome communication() {
  const Problem p = make_quadratic(50, 10.0, 0.1, 20, 8, 7);
  const std::size_t T = 300, P = 8;
  Outcome out{true, {}};
  for (std::size_t k : {5, 10, 50}) {
    RunSpec s;
    s.hp = ef_params(0.005, 0.05, k);
    s.hp.T = T;
    s.seed = 5;
    s.method = Method::s_sgd_ef;
    const std::size_t sgd = run(p, s).final_record().comm_raw_cum;
    s.method = Method::s_snag_ef;
    s.hp = accel_params(0.005, 0.1, 0.05, k);
    s.hp.T = T;
    const std::size_t snag = run(p, s).final_record().comm_raw_cum;
    const std::size_t expected = T * P * std::min<std::size_t>(k, 50);
    out.passed = out.passed && sgd == expected && snag == expected;
    out.details += "k=" + std::to_string(k) + ": " + std::to_string(sgd) + "/" +
                   std::to_string(snag) + " vs " + std::to_string(expected) + "; ";
  }
  return out;
}

std::vector<std::string> files_in(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  const fs::path root =
      fs::temp_directory_path() / ("sparsefeed_acceptance_" + std::to_string(stamp));
  const fs::path a = root / "a", b = root / "b";
  fs::create_directories(a);
  fs::create_directories(b);
  Outcome out{true, {}};
  std::size_t configs = 0, compared = 0;
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(SPARSEFEED_CONFIG_DIR))
    if (e.path().extension() == ".conf") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const fs::path& conf : paths) {
    ++configs;
    const std::string stem = conf.stem().string();
    std::ostringstream sink;
    for (const fs::path& dir : {a, b}) {
      if (cmd_run(conf.string(), (dir / (stem + ".csv")).string(), sink, sink) != kOk) {
        out.passed = false;
        out.details += stem + " failed to run; ";
      }
    }
  }
  const auto na = files_in(a), nb = files_in(b);
  if (na != nb) {
    out.passed = false;
    out.details += "output file sets differ; ";
  }
  for (const std::string& name : na) {
    if (slurp(a / name) != slurp(b / name)) {
      out.passed = false;
      out.details += name + " differs; ";
    }
    ++compared;
  }
  fs::remove_all(root);
  out.passed = out.passed && configs > 0;
  out.details += std::to_string(configs) + " configs, " + std::to_string(compared) +
                 " files compared byte for byte";
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"shadow identity", shadow_identity},
      {"compressor second moment", compressor_exactness},
      {"unbiasedness and subset uniformity", unbiasedness_and_uniformity},
      {"reductions to uncompressed methods", reductions},
      {"memory orthogonality", orthogonality},
      {"memory 1/P scaling", memory_scaling},
      {"strongly convex convergence quality", convex_quality},
      {"acceleration in the deterministic limit", acceleration},
      {"nonconvex regularized wrapper", nonconvex_wrapper},
      {"communication accounting", communication},
      {"determinism of metrics files", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const Clock clock;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::printf("[%s] %2zu %s: %s (%.1f s)\n", o.passed ? "PASS" : "FAIL", i + 1,
                criteria[i].first, o.details.c_str(), clock.seconds());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
