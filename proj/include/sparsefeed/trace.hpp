#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsefeed/linalg.hpp"

namespace sparsefeed {

/// One logged round. Communication counters are cumulative unless suffixed
/// with _round.
struct RoundRecord {
  std::size_t t = 0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double mem_norm_sq = 0.0;
  std::size_t comm_raw_round = 0;
  std::size_t comm_capped_round = 0;
  std::size_t comm_raw_cum = 0;
  std::size_t comm_capped_cum = 0;
  std::vector<double> extra;
};

struct StoredIterate {
  std::size_t t = 0;
  Vec x;
};

/// Outer-stage summary for the recursively regularized method.
struct StageRecord {
  std::size_t s = 0;
  double loss = 0.0;            // F(x_s)
  double grad_norm_sq = 0.0;    // ||grad F(x_s)||^2
  double inner_grad_norm_sq = 0.0;  // ||grad F_s(x_s)||^2 on the regularized objective
  double descent_lhs = 0.0;
  double descent_rhs = 0.0;     // eps_s / 2 + 4 L (F(x_{s-1}) - F(x_s)), eps_s = 8 ||grad F_s(x_s)||^2
  double descent_rhs_strict = 0.0;  // 6 ||grad F_s||^2 + 8 L (F(x_{s-1}) - F(x_s))

  bool descent_holds() const { return descent_lhs <= descent_rhs; }
};

struct Trace {
  std::vector<RoundRecord> records;
  std::vector<StoredIterate> iterates;
  std::vector<StageRecord> stages;
  std::vector<StoredIterate> stage_iterates;
  std::vector<std::string> extra_names;
  StoredIterate output;  // iterate chosen by the output rule
  std::uint64_t config_fingerprint = 0;
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  // Largest relative violation of m_t = x_t - shadow_t seen; negative when the
  // shadow was not attached.
  double max_shadow_error = -1.0;
  // Largest |aggregate memory - mean of worker memories|.
  double max_memory_avg_error = 0.0;

  bool empty() const { return records.empty(); }
  const RoundRecord& final_record() const { return records.back(); }
};

}  // namespace sparsefeed
