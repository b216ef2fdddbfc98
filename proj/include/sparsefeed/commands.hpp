#pragma once

// Subcommand implementations behind the sparsefeed CLI. Each returns a process
// exit code: 0 ok, 1 check failure, 2 configuration error, 3 I/O error.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sparsefeed/config.hpp"
#include "sparsefeed/datasets.hpp"
#include "sparsefeed/diagnostics.hpp"
#include "sparsefeed/metrics.hpp"
#include "sparsefeed/objectives.hpp"
#include "sparsefeed/simulator.hpp"

namespace sparsefeed {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kConfigError = 2, kIoError = 3 };

inline constexpr const char* kSeedEnv = "SPARSEFEED_SEED";

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Parses a config file and applies the SPARSEFEED_SEED override. Relative
/// dataset paths are taken relative to the config file's directory.
inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig c = parse_config(read_text(path));
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  for (std::string* p : {&c.problem.path, &c.problem.test_path})
    if (!p->empty() && std::filesystem::path(*p).is_relative())
      *p = (dir / *p).lexically_normal().string();
  if (const char* env = std::getenv(kSeedEnv); env && *env)
    c.seed = detail::to_uint(kSeedEnv, env);
  return c;
}

struct BuiltProblem {
  Problem problem;
  std::optional<Dataset> train;
  std::optional<Dataset> test;
};

inline Dataset load_dataset(const ProblemConfig& p, const std::string& path) {
  std::string format = p.format;
  if (format == "auto")
    format = std::filesystem::path(path).extension() == ".csv" ? "csv" : "libsvm";
  return format == "csv" ? load_csv(path, p.label_column) : load_libsvm(path);
}

inline BuiltProblem build_problem(const ExperimentConfig& c) {
  const ProblemConfig& p = c.problem;
  if (p.kind == "quadratic")
    return {make_quadratic(p.d, p.L, p.mu, p.n, c.P, p.seed, p.noise), std::nullopt, std::nullopt};
  if (p.kind == "nonconvex")
    return {make_nonconvex(p.d, p.n, c.P, p.seed), std::nullopt, std::nullopt};
  Dataset train, test;
  Dataset all = load_dataset(p, p.path);
  if (!p.test_path.empty()) {
    train = std::move(all);
    test = load_dataset(p, p.test_path);
    test.classes = train.classes = std::max(train.classes, test.classes);
  } else {
    auto split = train_test_split(all, 0.8, p.seed);
    train = std::move(split.train);
    test = std::move(split.test);
  }
  if (p.normalize) {
    const FeatureScaling s = fit_scaling(train);
    apply_scaling(s, train);
    apply_scaling(s, test);
  }
  if (test.feature_dim() != train.feature_dim())
    throw DataError("test set has " + std::to_string(test.feature_dim()) + " features, train has " +
                    std::to_string(train.feature_dim()));
  Problem prob = make_logreg(train, p.l2, c.P, p.seed);
  return {std::move(prob), std::move(train), std::move(test)};
}

/// Accuracy and unregularized loss on the train and test sets.
inline void attach_logreg_evaluator(RunSpec& spec, const BuiltProblem& built) {
  if (!built.train || !built.test) return;
  const Dataset* train = &*built.train;
  const Dataset* test = &*built.test;
  spec.extra_names = {"train_data_loss", "train_acc", "test_loss", "test_acc"};
  spec.evaluator = [train, test](std::span<const double> x) {
    std::vector<double> out{logreg_data_loss(x, *train), logreg_accuracy(x, *train)};
    if (test->size()) {
      out.push_back(logreg_data_loss(x, *test));
      out.push_back(logreg_accuracy(x, *test));
    } else {
      out.push_back(0.0);
      out.push_back(0.0);
    }
    return out;
  };
}

/// One run of the configured experiment with the config's seed.
inline Trace run_experiment(const ExperimentConfig& c) {
  validate_config(c);
  const BuiltProblem built = build_problem(c);
  RunSpec spec = make_run_spec(c, built.problem.dim());
  attach_logreg_evaluator(spec, built);
  return run(built.problem, spec);
}

/// `repeats` runs with seeds seed, seed + 1, ...
inline std::vector<Trace> run_repeats(const ExperimentConfig& c) {
  validate_config(c);
  const BuiltProblem built = build_problem(c);
  std::vector<Trace> out;
  for (std::size_t r = 0; r < c.repeats; ++r) {
    ExperimentConfig cr = c;
    cr.seed = c.seed + r;
    RunSpec spec = make_run_spec(cr, built.problem.dim());
    attach_logreg_evaluator(spec, built);
    out.push_back(run(built.problem, spec));
  }
  return out;
}

inline std::string repeat_path(const std::string& base, std::size_t r, std::size_t repeats) {
  if (repeats == 1) return base;
  std::filesystem::path p(base);
  const std::string stem = p.stem().string();
  p.replace_filename(stem + ".r" + std::to_string(r) + p.extension().string());
  return p.string();
}

/// Runs `body`, mapping exceptions to exit codes with a message on `err`.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const ShadowViolation& e) {
    err << "check failed: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
}

inline void print_identity(std::ostream& out, const ExperimentConfig& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_fingerprint(c)));
  out << "fingerprint=" << buf << " seed=" << c.seed << "\n";
}

/// `run <config> [--out path]`
inline int cmd_run(const std::string& config_path, const std::string& out_path, std::ostream& out,
                   std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load_config(config_path);
    print_identity(out, c);
    std::string base = out_path;
    if (base.empty()) base = c.output;
    if (base.empty()) base = std::filesystem::path(config_path).stem().string() + ".metrics.csv";
    const auto traces = run_repeats(c);
    for (std::size_t r = 0; r < traces.size(); ++r) {
      const std::string path = repeat_path(base, r, traces.size());
      write_metrics(traces[r], path);
      const RoundRecord& last = traces[r].final_record();
      char line[256];
      std::snprintf(line, sizeof line, "seed=%llu rounds=%zu loss=%.17g grad_norm_sq=%.6g -> %s",
                    static_cast<unsigned long long>(c.seed + r), traces[r].rounds, last.loss,
                    last.grad_norm_sq, path.c_str());
      out << line << "\n";
    }
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------
// Sweeps.

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

/// Grid file: one `key = v1, v2, ...` line per axis; `#` comments.
inline std::vector<GridAxis> parse_grid(const std::string& text) {
  std::vector<GridAxis> axes;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", "grid line " + std::to_string(lineno) + ": expected key = v1, v2");
    GridAxis axis{detail::trim(std::string_view(t).substr(0, eq)), {}};
    std::istringstream vs(t.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ',')) {
      v = detail::trim(v);
      if (!v.empty()) axis.values.push_back(v);
    }
    if (axis.values.empty()) throw ConfigError(axis.key, "grid axis has no values");
    axes.push_back(std::move(axis));
  }
  return axes;
}

struct SweepCell {
  std::vector<std::string> values;  // one per axis
  ExperimentConfig config;
  std::vector<double> final_losses;
  double mean = 0.0;
  double sd = 0.0;
};

/// Cross product of the grid applied to the template config.
inline std::vector<SweepCell> expand_grid(const ExperimentConfig& base,
                                          const std::vector<GridAxis>& axes) {
  std::vector<SweepCell> cells{{{}, base, {}, 0.0, 0.0}};
  for (const GridAxis& axis : axes) {
    std::vector<SweepCell> next;
    for (const SweepCell& cell : cells)
      for (const std::string& v : axis.values) {
        SweepCell c = cell;
        c.values.push_back(v);
        if (axis.key == "k") c.config.k_ratio.reset();
        if (axis.key == "k_ratio") c.config.k.reset();
        set_config_key(c.config, axis.key, v);
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }
  for (const SweepCell& c : cells) validate_config(c.config);
  return cells;
}

/// Runs every cell with `repeats` seeds each, writing
/// <dir>/cell<i>.r<r>.csv and <dir>/summary.csv (mean and sample std of final loss).
inline std::vector<SweepCell> sweep(const ExperimentConfig& base, const std::vector<GridAxis>& axes,
                                    const std::string& dir, unsigned jobs = 1) {
  std::vector<SweepCell> cells = expand_grid(base, axes);
  std::filesystem::create_directories(dir);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        SweepCell& cell = cells[i];
        const auto traces = run_repeats(cell.config);
        for (std::size_t r = 0; r < traces.size(); ++r) {
          write_metrics(traces[r], (std::filesystem::path(dir) /
                                    ("cell" + std::to_string(i) + ".r" + std::to_string(r) + ".csv"))
                                       .string());
          cell.final_losses.push_back(traces[r].final_record().loss);
        }
        const double n = static_cast<double>(cell.final_losses.size());
        for (double v : cell.final_losses) cell.mean += v;
        cell.mean /= n;
        double ss = 0.0;
        for (double v : cell.final_losses) ss += (v - cell.mean) * (v - cell.mean);
        cell.sd = n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned j = 1; j < std::max(1u, jobs); ++j) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  detail::File f((std::filesystem::path(dir) / "summary.csv").string());
  std::fprintf(f.get(), "cell");
  for (const GridAxis& a : axes) std::fprintf(f.get(), ",%s", a.key.c_str());
  std::fprintf(f.get(), ",repeats,mean_final_loss,std_final_loss\n");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::fprintf(f.get(), "%zu", i);
    for (const std::string& v : cells[i].values) std::fprintf(f.get(), ",%s", v.c_str());
    std::fprintf(f.get(), ",%zu,%.17g,%.17g\n", cells[i].final_losses.size(), cells[i].mean,
                 cells[i].sd);
  }
  f.close();
  return cells;
}

/// `sweep <config> --grid <file> [--out dir] [--jobs n]`
inline int cmd_sweep(const std::string& config_path, const std::string& grid_path,
                     const std::string& out_dir, unsigned jobs, std::ostream& out,
                     std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load_config(config_path);
    print_identity(out, c);
    const auto axes = parse_grid(read_text(grid_path));
    const std::string dir = out_dir.empty() ? "sweep" : out_dir;
    const auto cells = sweep(c, axes, dir, jobs);
    out << cells.size() << " cells -> " << dir << "/summary.csv\n";
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------
// Validation suites.

enum class Suite { fast, full };

inline std::vector<CheckReport> run_validation(Suite suite, std::uint64_t seed) {
  const bool full = suite == Suite::full;
  const std::size_t compress_trials = full ? 100000 : 20000;
  const std::size_t orth_trials = full ? 2000 : 300;
  const std::size_t mem_trials = full ? 500 : 60;
  std::vector<CheckReport> reports;
  StreamFactory streams(seed);

  Stream r1 = streams.stream(0, 0, Channel::sample);
  reports.push_back(check_unbiasedness(2, 5, compress_trials, r1));
  reports.back().name = "unbiasedness d=5 k=2";

  // Negative control: the deterministic top-k compressor must be flagged as biased.
  {
    const Vec skewed{3.0, 1.0, 0.5};
    Stream r = streams.stream(0, 1, Channel::sample);
    CheckReport c = check_unbiasedness(skewed, 1, compress_trials, r, top_k_compressor());
    c.name = "top_k flagged as biased";
    c.details = c.passed ? "top_k unexpectedly passed the unbiasedness test" : "";
    c.passed = !c.passed;
    reports.push_back(c);
  }

  Stream r2 = streams.stream(0, 2, Channel::sample);
  reports.push_back(check_subset_uniformity(5, 2, compress_trials, r2));

  {
    CheckReport all{"second moment, exhaustive d<=6", true, 0.0, 1e-12, 0, {}};
    Stream r = streams.stream(0, 3, Channel::sample);
    for (std::size_t d = 1; d <= 6; ++d)
      for (std::size_t k = 1; k <= d; ++k) {
        const CheckReport c = check_second_moment(k, d, r);
        all.statistic = std::max(all.statistic, c.statistic);
        all.n_trials += c.n_trials;
        if (!c.passed) {
          all.passed = false;
          all.details = "d=" + std::to_string(d) + " k=" + std::to_string(k) + ": " + c.details;
        }
      }
    reports.push_back(all);
  }
  Stream r3 = streams.stream(0, 4, Channel::sample);
  reports.push_back(check_second_moment(10, full ? 1000 : 100, r3, compress_trials));
  reports.back().name = "second moment, Monte-Carlo";

  {
    const Problem q = make_quadratic(2, 1.0, 0.25, 1, 1, 7, 0.0);
    reports.push_back(check_nag_equivalence(q, 0.04, 0.25, 100));
  }

  const Problem quad2 = make_quadratic(20, 1.0, 0.1, 8, 2, 7);
  HyperParams hp;
  hp.eta = 0.05;
  hp.k = 4;
  hp.gamma = 0.5 * 4.0 / 20.0;
  const std::vector<std::size_t> times{1, 5, 20};
  reports.push_back(
      check_memory_orthogonality(Method::s_sgd_ef, quad2, hp, times, orth_trials, seed));
  HyperParams ahp = hp;
  ahp.mu_hint = 0.1;
  ahp = resolve_accel(ahp);
  reports.push_back(
      check_memory_orthogonality(Method::s_snag_ef, quad2, ahp, times, orth_trials, seed));

  reports.push_back(check_memory_bound(Method::s_sgd_ef, quad2, hp, 200, mem_trials, seed));
  {
    HyperParams h0 = hp;
    h0.gamma = 0.0;
    CheckReport c = check_memory_bound(Method::s_sgd_ef, quad2, h0, 200, mem_trials, seed);
    c.name = "memory grows without feedback (gamma=0)";
    c.details = c.passed ? "memory plateaued with gamma = 0" : "";
    c.passed = !c.passed;
    reports.push_back(c);
  }
  {
    const Problem single = make_quadratic(20, 1.0, 0.1, 16 * 4, 1, 7);
    const Problem many = make_quadratic(20, 1.0, 0.1, 4, 16, 7);
    reports.push_back(
        check_memory_scaling(Method::s_sgd_ef, single, many, hp, 200, mem_trials, seed));
  }
  {
    const Problem q = make_quadratic(20, 1.0, 0.1, 8, 4, 7);
    RunSpec s;
    s.method = Method::s_snag_ef;
    s.hp = ahp;
    s.hp.T = full ? 1000 : 200;
    s.shadow = true;
    s.seed = seed;
    CheckReport c{"shadow identity", true, 0.0, kShadowTolerance, s.hp.T, {}};
    try {
      c.statistic = run(q, s).max_shadow_error;
      s.method = Method::s_sgd_ef;
      c.statistic = std::max(c.statistic, run(q, s).max_shadow_error);
    } catch (const ShadowViolation& e) {
      c.passed = false;
      c.details = e.what();
    }
    reports.push_back(c);
  }
  return reports;
}

inline void print_reports(std::ostream& out, const std::vector<CheckReport>& reports) {
  for (const CheckReport& r : reports) {
    char line[512];
    std::snprintf(line, sizeof line, "%-4s  %-44s stat=%-12.6g threshold=%-10.4g trials=%zu",
                  r.passed ? "PASS" : "FAIL", r.name.c_str(), r.statistic, r.threshold,
                  r.n_trials);
    out << line;
    if (!r.details.empty()) out << "  " << r.details;
    out << "\n";
  }
}

/// `validate [--suite fast|full]`
inline int cmd_validate(Suite suite, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto reports = run_validation(suite, seed);
    print_reports(out, reports);
    const bool ok = std::all_of(reports.begin(), reports.end(),
                                [](const CheckReport& r) { return r.passed; });
    return int{ok ? kOk : kCheckFailed};
  });
}

// ---------------------------------------------------------------------------

/// Series name for a compared config: the output stem if set, otherwise the
/// config file stem.
inline std::string series_name(const ExperimentConfig& c, const std::string& config_path) {
  if (!c.output.empty()) return std::filesystem::path(c.output).stem().string();
  return std::filesystem::path(config_path).stem().string();
}

/// `compare <configs...> --emit-plots <dir>`
inline int cmd_compare(const std::vector<std::string>& config_paths, const std::string& plot_dir,
                       std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (config_paths.empty()) throw ConfigError("", "compare needs at least one config");
    for (const std::string& path : config_paths) {
      const ExperimentConfig c = load_config(path);
      print_identity(out, c);
      const auto traces = run_repeats(c);
      const std::string series = series_name(c, path);
      std::vector<std::string> metrics{"loss", "grad_norm_sq", "mem_norm_sq", "comm_raw_cum",
                                       "comm_capped_cum"};
      for (const auto& e : traces.front().extra_names) metrics.push_back(e);
      double mean_final = 0.0;
      for (const Trace& t : traces) mean_final += t.final_record().loss;
      mean_final /= static_cast<double>(traces.size());
      char line[256];
      std::snprintf(line, sizeof line, "%-24s repeats=%zu mean_final_loss=%.10g", series.c_str(),
                    traces.size(), mean_final);
      out << line << "\n";
      if (!plot_dir.empty())
        for (const std::string& m : metrics) emit_plot_data(plot_dir, series, m, traces);
    }
    return int{kOk};
  });
}

}  // namespace sparsefeed
