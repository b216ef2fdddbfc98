#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsefeed/linalg.hpp"
#include "sparsefeed/random.hpp"

namespace sparsefeed {

struct Entry {
  std::size_t index = 0;
  double value = 0.0;

  friend bool operator==(const Entry&, const Entry&) = default;
};

/// Sparse message on the simulated wire. Values are stored already scaled;
/// indices are strictly increasing.
struct CompressedMessage {
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<Entry> entries;

  friend bool operator==(const CompressedMessage&, const CompressedMessage&) = default;
};

enum class Sampling { without_replacement, with_replacement };

inline void check_budget(std::size_t k, std::size_t d) {
  if (k == 0) throw std::invalid_argument("compression: k must be >= 1");
  if (k > d)
    throw std::invalid_argument("compression: k = " + std::to_string(k) +
                                " exceeds d = " + std::to_string(d));
}

/// Uniform size-k subset of [0, d) via partial Fisher-Yates. Consumes exactly
/// k draws from rng. Returned sorted.
inline std::vector<std::size_t> sample_subset(std::size_t d, std::size_t k, Stream& rng) {
  check_budget(k, d);
  std::vector<std::size_t> pool(d);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(d - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// RandComp restricted to a given subset J: entry j carries (d/|J|) x_j.
inline CompressedMessage rand_comp_on(std::span<const double> x,
                                      std::span<const std::size_t> subset) {
  const std::size_t d = x.size();
  check_budget(subset.size(), d);
  const double factor = static_cast<double>(d) / static_cast<double>(subset.size());
  CompressedMessage msg{d, subset.size(), {}};
  msg.entries.reserve(subset.size());
  for (std::size_t j : subset) {
    if (j >= d) throw std::out_of_range("rand_comp_on: index out of range");
    if (!msg.entries.empty() && msg.entries.back().index >= j)
      throw std::invalid_argument("rand_comp_on: subset must be strictly increasing");
    msg.entries.push_back({j, factor * x[j]});
  }
  return msg;
}

/// Unbiased random sparsifier: keeps k random coordinates scaled by d/k.
///
/// With Sampling::with_replacement the k draws are i.i.d. uniform on [d] and a
/// coordinate drawn c times carries c * (d/k) x_j, so the message may hold
/// fewer than k entries.
inline CompressedMessage rand_comp(std::span<const double> x, std::size_t k, Stream& rng,
                                   Sampling sampling = Sampling::without_replacement) {
  const std::size_t d = x.size();
  check_budget(k, d);
  if (sampling == Sampling::without_replacement) {
    const auto subset = sample_subset(d, k, rng);
    return rand_comp_on(x, subset);
  }
  std::vector<std::size_t> draws(k);
  for (auto& j : draws) j = rng.uniform_index(d);
  std::sort(draws.begin(), draws.end());
  const double factor = static_cast<double>(d) / static_cast<double>(k);
  CompressedMessage msg{d, k, {}};
  for (std::size_t a = 0; a < draws.size();) {
    std::size_t b = a;
    while (b < draws.size() && draws[b] == draws[a]) ++b;
    msg.entries.push_back({draws[a], static_cast<double>(b - a) * factor * x[draws[a]]});
    a = b;
  }
  return msg;
}

/// Keeps the k largest-magnitude coordinates verbatim; ties go to the lower index.
inline CompressedMessage top_k(std::span<const double> x, std::size_t k) {
  const std::size_t d = x.size();
  check_budget(k, d);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double fa = std::abs(x[a]), fb = std::abs(x[b]);
                      return fa > fb || (fa == fb && a < b);
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  CompressedMessage msg{d, k, {}};
  msg.entries.reserve(k);
  for (std::size_t j : order) msg.entries.push_back({j, x[j]});
  return msg;
}

/// Uncompressed message carrying every coordinate.
inline CompressedMessage full_message(std::span<const double> x) {
  CompressedMessage msg{x.size(), x.size(), {}};
  msg.entries.reserve(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) msg.entries.push_back({j, x[j]});
  return msg;
}

inline void densify_into(const CompressedMessage& msg, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const Entry& e : msg.entries) out[e.index] = e.value;
}

inline Vec densify(const CompressedMessage& msg) {
  Vec out(msg.d, 0.0);
  densify_into(msg, out);
  return out;
}

/// out += densify(msg)
inline void accumulate(const CompressedMessage& msg, std::span<double> out) {
  for (const Entry& e : msg.entries) out[e.index] += e.value;
}

/// Scalar payload slots the message occupies on the wire.
inline std::size_t wire_entries(const CompressedMessage& msg) {
  return std::min(msg.entries.size(), msg.d);
}

/// Structural invariants: strictly increasing in-range indices, |entries| <= k <= d.
inline bool is_valid(const CompressedMessage& msg) {
  if (msg.k > msg.d || msg.entries.size() > msg.k) return false;
  for (std::size_t a = 0; a < msg.entries.size(); ++a) {
    if (msg.entries[a].index >= msg.d) return false;
    if (a > 0 && msg.entries[a - 1].index >= msg.entries[a].index) return false;
  }
  return true;
}

/// Debug dump, one `index<TAB>value` line per entry.
inline void write_debug(const CompressedMessage& msg, std::ostream& os) {
  const auto old = os.precision(17);
  for (const Entry& e : msg.entries) os << e.index << '\t' << e.value << '\n';
  os.precision(old);
}

// ---------------------------------------------------------------------------
// Sparsifier policies consumed by the round functions. Each is a callable
// (gradient, k, tag, stream) -> message.

/// Identifies which message of which round a sparsifier call produces.
struct MessageTag {
  std::size_t t = 0;
  std::size_t p = 0;
  Channel channel = Channel::subset_y;
};

struct RandCompSparsifier {
  Sampling sampling = Sampling::without_replacement;
  CompressedMessage operator()(std::span<const double> g, std::size_t k, const MessageTag&,
                               Stream& rng) const {
    return rand_comp(g, k, rng, sampling);
  }
};

struct TopKSparsifier {
  CompressedMessage operator()(std::span<const double> g, std::size_t k, const MessageTag&,
                               Stream&) const {
    return top_k(g, k);
  }
};

/// Full precision: ignores k and ships the dense vector.
struct DenseSparsifier {
  CompressedMessage operator()(std::span<const double> g, std::size_t, const MessageTag&,
                               Stream&) const {
    return full_message(g);
  }
};

}  // namespace sparsefeed
