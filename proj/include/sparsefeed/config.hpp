#pragma once

// Experiment configuration: `key = value` text with optional `[problem]`
// section (equivalently, dotted `problem.` keys).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sparsefeed/optimizers.hpp"
#include "sparsefeed/simulator.hpp"

namespace sparsefeed {

/// Invalid configuration. key() names the offending key (may be empty for
/// syntax errors).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ProblemConfig {
  std::string kind = "quadratic";  // quadratic | logreg | nonconvex
  std::size_t d = 10;
  double L = 1.0;
  double mu = 0.1;
  std::size_t n = 10;  // samples per worker (synthetic problems)
  double noise = 1.0;
  std::uint64_t seed = 7;
  std::string path;
  std::string format = "auto";  // auto | csv | libsvm
  long label_column = -1;       // csv; negative counts from the end
  double l2 = 1e-4;
  bool normalize = false;
  std::string test_path;

  friend bool operator==(const ProblemConfig&, const ProblemConfig&) = default;
};

struct ExperimentConfig {
  Method method = Method::s_sgd_ef;
  ProblemConfig problem;
  std::size_t P = 1;
  std::optional<std::size_t> k;
  std::optional<double> k_ratio;
  double eta = 0.1;
  double mu_hint = 0.0;
  std::optional<double> gamma;
  double sigma = 0.0;
  std::size_t T = 100;
  std::size_t S = 1;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;
  std::size_t repeats = 1;
  OutputRule output_rule = OutputRule::last;
  std::size_t window = 1;
  bool shadow = false;
  bool full_batch = false;
  bool full_precision = false;
  ZCorrection z_correction = ZCorrection::paper;
  NagForm nag_form = NagForm::mixed;
  Sampling sampling = Sampling::without_replacement;
  unsigned threads = 1;
  std::optional<double> x0;  // constant initial point; origin when absent
  std::string output;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// ---------------------------------------------------------------------------
// Enum names.

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::parallel_sgd, Method::naive_sparse, Method::topk_ef, Method::s_sgd_ef,
                   Method::snag, Method::s_snag_ef, Method::reg_s_snag_ef})
    if (s == method_name(m)) return m;
  throw ConfigError("method", "unknown method '" + std::string(s) + "'");
}

inline const char* output_rule_name(OutputRule r) {
  switch (r) {
    case OutputRule::last: return "last";
    case OutputRule::geometric: return "geometric";
    case OutputRule::uniform: return "uniform";
  }
  return "?";
}

inline const char* z_correction_name(ZCorrection z) {
  return z == ZCorrection::paper ? "paper" : "y_memory";
}

inline const char* nag_form_name(NagForm f) { return f == NagForm::mixed ? "mixed" : "previous"; }

inline const char* sampling_name(Sampling s) {
  return s == Sampling::without_replacement ? "without_replacement" : "with_replacement";
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out))
    throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Applies one key. Unknown keys are errors.
inline void set_config_key(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  ProblemConfig& p = c.problem;
  if (key == "method") c.method = parse_method(v);
  else if (key == "P") c.P = to_uint(key, v);
  else if (key == "k") c.k = to_uint(key, v);
  else if (key == "k_ratio") c.k_ratio = to_double(key, v);
  else if (key == "eta") c.eta = to_double(key, v);
  else if (key == "mu_hint") c.mu_hint = to_double(key, v);
  else if (key == "gamma") c.gamma = to_double(key, v);
  else if (key == "sigma") c.sigma = to_double(key, v);
  else if (key == "T") c.T = to_uint(key, v);
  else if (key == "S") c.S = to_uint(key, v);
  else if (key == "seed") c.seed = to_uint(key, v);
  else if (key == "log_every") c.log_every = to_uint(key, v);
  else if (key == "repeats") c.repeats = to_uint(key, v);
  else if (key == "window") c.window = to_uint(key, v);
  else if (key == "shadow") c.shadow = to_bool(key, v);
  else if (key == "full_batch") c.full_batch = to_bool(key, v);
  else if (key == "full_precision") c.full_precision = to_bool(key, v);
  else if (key == "threads") c.threads = static_cast<unsigned>(to_uint(key, v));
  else if (key == "x0") c.x0 = to_double(key, v);
  else if (key == "output") c.output = v;
  else if (key == "output_rule") {
    if (v == "last") c.output_rule = OutputRule::last;
    else if (v == "geometric") c.output_rule = OutputRule::geometric;
    else if (v == "uniform") c.output_rule = OutputRule::uniform;
    else throw ConfigError(key, "expected last, geometric or uniform");
  } else if (key == "z_correction") {
    if (v == "paper") c.z_correction = ZCorrection::paper;
    else if (v == "y_memory") c.z_correction = ZCorrection::y_memory;
    else throw ConfigError(key, "expected paper or y_memory");
  } else if (key == "nag_form") {
    if (v == "mixed") c.nag_form = NagForm::mixed;
    else if (v == "previous") c.nag_form = NagForm::previous;
    else throw ConfigError(key, "expected mixed or previous");
  } else if (key == "sampling") {
    if (v == "without_replacement") c.sampling = Sampling::without_replacement;
    else if (v == "with_replacement") c.sampling = Sampling::with_replacement;
    else throw ConfigError(key, "expected without_replacement or with_replacement");
  }
  else if (key == "problem.kind") {
    if (v != "quadratic" && v != "logreg" && v != "nonconvex")
      throw ConfigError(key, "expected quadratic, logreg or nonconvex");
    p.kind = v;
  }
  else if (key == "problem.d") p.d = to_uint(key, v);
  else if (key == "problem.L") p.L = to_double(key, v);
  else if (key == "problem.mu") p.mu = to_double(key, v);
  else if (key == "problem.n") p.n = to_uint(key, v);
  else if (key == "problem.noise") p.noise = to_double(key, v);
  else if (key == "problem.seed") p.seed = to_uint(key, v);
  else if (key == "problem.path") p.path = v;
  else if (key == "problem.format") {
    if (v != "auto" && v != "csv" && v != "libsvm")
      throw ConfigError(key, "expected auto, csv or libsvm");
    p.format = v;
  }
  else if (key == "problem.label_column") p.label_column = to_long(key, v);
  else if (key == "problem.l2") p.l2 = to_double(key, v);
  else if (key == "problem.normalize") p.normalize = to_bool(key, v);
  else if (key == "problem.test_path") p.test_path = v;
  else throw ConfigError(key, "unknown key");
}

/// Cross-field constraints that do not depend on the problem dimension.
inline void validate_config(const ExperimentConfig& c) {
  if (c.k && c.k_ratio) throw ConfigError("k", "give exactly one of k and k_ratio");
  const bool dense = c.method == Method::parallel_sgd || c.method == Method::snag;
  if (!c.k && !c.k_ratio && !dense) throw ConfigError("k", "missing; set k or k_ratio");
  if (c.k && *c.k == 0) throw ConfigError("k", "must be >= 1");
  if (c.k_ratio && !(*c.k_ratio > 0.0 && *c.k_ratio <= 1.0))
    throw ConfigError("k_ratio", "must lie in (0, 1]");
  if (c.P == 0) throw ConfigError("P", "must be >= 1");
  if (!(c.eta > 0.0)) throw ConfigError("eta", "must be > 0");
  if (c.gamma && !(*c.gamma >= 0.0 && *c.gamma <= 1.0))
    throw ConfigError("gamma", "must lie in [0, 1]");
  if (c.repeats == 0) throw ConfigError("repeats", "must be >= 1");
  if (c.window == 0) throw ConfigError("window", "must be >= 1");
  if ((c.method == Method::s_snag_ef || c.method == Method::snag) && !(c.mu_hint > 0.0))
    throw ConfigError("mu_hint", std::string("must be > 0 for ") + method_name(c.method));
  if (c.method == Method::reg_s_snag_ef) {
    if (!(c.sigma > 0.0)) throw ConfigError("sigma", "must be > 0 for reg_s_snag_ef");
    if (c.S == 0) throw ConfigError("S", "must be >= 1 for reg_s_snag_ef");
  }
  const ProblemConfig& p = c.problem;
  if (p.kind == "quadratic") {
    if (p.d == 0) throw ConfigError("problem.d", "must be >= 1");
    if (!(p.mu > 0.0)) throw ConfigError("problem.mu", "must be > 0");
    if (p.mu > p.L) throw ConfigError("problem.mu", "must be <= problem.L");
    if (p.n == 0) throw ConfigError("problem.n", "must be >= 1");
    if (!(p.noise >= 0.0)) throw ConfigError("problem.noise", "must be >= 0");
  } else if (p.kind == "nonconvex") {
    if (p.d == 0) throw ConfigError("problem.d", "must be >= 1");
    if (p.n == 0) throw ConfigError("problem.n", "must be >= 1");
  } else if (p.kind == "logreg") {
    if (p.path.empty()) throw ConfigError("problem.path", "required for logreg");
    if (!(p.l2 >= 0.0)) throw ConfigError("problem.l2", "must be >= 0");
  }
}

inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("", "line " + std::to_string(lineno) + ": bad section");
      section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      if (!section.empty() && section != "problem")
        throw ConfigError(section, "unknown section");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", "line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    for (const auto& s : seen)
      if (s == key) throw ConfigError(key, "given twice");
    seen.push_back(key);
    set_config_key(c, key, value);
  }
  validate_config(c);
  return c;
}

inline std::string write_config(const ExperimentConfig& c) {
  using detail::fmt17;
  std::ostringstream os;
  os << "method = " << method_name(c.method) << "\n";
  os << "P = " << c.P << "\n";
  if (c.k) os << "k = " << *c.k << "\n";
  if (c.k_ratio) os << "k_ratio = " << fmt17(*c.k_ratio) << "\n";
  os << "eta = " << fmt17(c.eta) << "\n";
  os << "mu_hint = " << fmt17(c.mu_hint) << "\n";
  if (c.gamma) os << "gamma = " << fmt17(*c.gamma) << "\n";
  os << "sigma = " << fmt17(c.sigma) << "\n";
  os << "T = " << c.T << "\n";
  os << "S = " << c.S << "\n";
  os << "seed = " << c.seed << "\n";
  os << "log_every = " << c.log_every << "\n";
  os << "repeats = " << c.repeats << "\n";
  os << "output_rule = " << output_rule_name(c.output_rule) << "\n";
  os << "window = " << c.window << "\n";
  os << "shadow = " << (c.shadow ? "true" : "false") << "\n";
  os << "full_batch = " << (c.full_batch ? "true" : "false") << "\n";
  os << "full_precision = " << (c.full_precision ? "true" : "false") << "\n";
  os << "z_correction = " << z_correction_name(c.z_correction) << "\n";
  os << "nag_form = " << nag_form_name(c.nag_form) << "\n";
  os << "sampling = " << sampling_name(c.sampling) << "\n";
  os << "threads = " << c.threads << "\n";
  if (c.x0) os << "x0 = " << fmt17(*c.x0) << "\n";
  if (!c.output.empty()) os << "output = " << c.output << "\n";
  const ProblemConfig& p = c.problem;
  os << "\n[problem]\n";
  os << "kind = " << p.kind << "\n";
  os << "d = " << p.d << "\n";
  os << "L = " << fmt17(p.L) << "\n";
  os << "mu = " << fmt17(p.mu) << "\n";
  os << "n = " << p.n << "\n";
  os << "noise = " << fmt17(p.noise) << "\n";
  os << "seed = " << p.seed << "\n";
  if (!p.path.empty()) os << "path = " << p.path << "\n";
  os << "format = " << p.format << "\n";
  os << "label_column = " << p.label_column << "\n";
  os << "l2 = " << fmt17(p.l2) << "\n";
  os << "normalize = " << (p.normalize ? "true" : "false") << "\n";
  if (!p.test_path.empty()) os << "test_path = " << p.test_path << "\n";
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_fingerprint(const ExperimentConfig& c) { return fnv1a(write_config(c)); }

/// k from the config for dimension d: k_ratio rounds half up; at least 1, or 2
/// for the accelerated methods.
inline std::size_t resolve_k(const ExperimentConfig& c, std::size_t d) {
  const bool accel = c.method == Method::s_snag_ef || c.method == Method::reg_s_snag_ef;
  const std::size_t floor_k = accel ? 2 : 1;
  std::size_t k = d;
  if (c.k)
    k = *c.k;
  else if (c.k_ratio)
    k = std::max(floor_k, static_cast<std::size_t>(std::floor(*c.k_ratio * static_cast<double>(d) + 0.5)));
  if (k > d) throw ConfigError(c.k ? "k" : "k_ratio", "k = " + std::to_string(k) + " exceeds d = " + std::to_string(d));
  if (k < floor_k) throw ConfigError("k", "must be >= 2 for the accelerated methods");
  return k;
}

/// gamma from the config, defaulting to 0.5 k/d.
inline double resolve_gamma(const ExperimentConfig& c, std::size_t k, std::size_t d) {
  if (c.gamma) return *c.gamma;
  return 0.5 * static_cast<double>(k) / static_cast<double>(d);
}

/// Hyperparameters and driver options for a problem of dimension d.
inline RunSpec make_run_spec(const ExperimentConfig& c, std::size_t d) {
  RunSpec s;
  s.method = c.method;
  s.hp.eta = c.eta;
  s.hp.k = resolve_k(c, d);
  s.hp.gamma = resolve_gamma(c, s.hp.k, d);
  s.hp.mu_hint = c.mu_hint;
  s.hp.sigma = c.sigma;
  s.hp.T = c.T;
  s.hp.S = c.S;
  s.round.gradient = c.full_batch ? GradientMode::full_batch : GradientMode::stochastic;
  s.round.z_correction = c.z_correction;
  s.round.nag_form = c.nag_form;
  s.round.threads = c.threads;
  s.sampling = c.sampling;
  s.output_rule = c.output_rule;
  s.seed = c.seed;
  s.log_every = c.log_every;
  s.window = c.window;
  s.shadow = c.shadow;
  s.full_precision = c.full_precision;
  if (c.x0) s.x0.assign(d, *c.x0);
  s.fingerprint = config_fingerprint(c);
  return s;
}

}  // namespace sparsefeed
