#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "sparsefeed/compression.hpp"

using namespace sparsefeed;

namespace {

Vec random_vec(Stream& rng, std::size_t d) {
  Vec x(d);
  for (double& v : x) v = rng.normal();
  return x;
}

void for_each_subset(std::size_t d, std::size_t k, std::vector<std::size_t>& cur, std::size_t from,
                     const std::function<void(const std::vector<std::size_t>&)>& fn) {
  if (cur.size() == k) {
    fn(cur);
    return;
  }
  for (std::size_t j = from; j < d; ++j) {
    cur.push_back(j);
    for_each_subset(d, k, cur, j + 1, fn);
    cur.pop_back();
  }
}

}  // namespace

TEST(RandComp, ForcedSubsetExample) {
  const Vec x{1.0, 2.0, 3.0, 4.0};
  const std::vector<std::size_t> J{0, 2};
  EXPECT_EQ(densify(rand_comp_on(x, J)), (Vec{2.0, 0.0, 6.0, 0.0}));
}

TEST(RandComp, FullBudgetIsIdentity) {
  Stream rng(3);
  for (std::size_t d : {1u, 2u, 7u, 50u}) {
    const Vec x = random_vec(rng, d);
    EXPECT_EQ(densify(rand_comp(x, d, rng)), x);
  }
}

TEST(RandComp, RejectsBadBudgets) {
  Stream rng(1);
  const Vec x(4, 1.0);
  EXPECT_THROW(rand_comp(x, 0, rng), std::invalid_argument);
  EXPECT_THROW(rand_comp(x, 5, rng), std::invalid_argument);
  EXPECT_THROW(top_k(x, 0), std::invalid_argument);
  EXPECT_THROW(top_k(x, 5), std::invalid_argument);
  const std::vector<std::size_t> unsorted{2, 1};
  EXPECT_THROW(rand_comp_on(x, unsorted), std::invalid_argument);
  const std::vector<std::size_t> outside{1, 9};
  EXPECT_THROW(rand_comp_on(x, outside), std::out_of_range);
}

TEST(RandComp, PropertyInvariants) {
  Stream gen(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 1 + gen.uniform_index(40);
    const std::size_t k = 1 + gen.uniform_index(d);
    const Vec x = random_vec(gen, d);
    const CompressedMessage msg = rand_comp(x, k, gen);
    ASSERT_TRUE(is_valid(msg));
    ASSERT_EQ(msg.entries.size(), k);
    ASSERT_EQ(wire_entries(msg), k);
    const double factor = static_cast<double>(d) / static_cast<double>(k);
    const Vec dense = densify(msg);
    std::size_t nonzero_support = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const bool kept = std::any_of(msg.entries.begin(), msg.entries.end(),
                                    [&](const Entry& e) { return e.index == j; });
      if (kept) {
        ++nonzero_support;
        ASSERT_EQ(dense[j], factor * x[j]);
      } else {
        ASSERT_EQ(dense[j], 0.0);
      }
    }
    ASSERT_EQ(nonzero_support, k);
  }
}

TEST(RandComp, ConsumesExactlyKDraws) {
  for (std::size_t k : {1u, 3u, 10u}) {
    Stream a(99), b(99);
    const Vec x(20, 1.0);
    rand_comp(x, k, a);
    for (std::size_t i = 0; i < k; ++i) b.uniform_index(20 - i);
    EXPECT_EQ(a.uniform_index(1000000), b.uniform_index(1000000)) << "k=" << k;
  }
}

TEST(RandComp, ZeroVectorStaysZero) {
  Stream rng(5);
  const Vec x(12, 0.0);
  for (double v : densify(rand_comp(x, 4, rng))) EXPECT_EQ(v, 0.0);
}

TEST(RandComp, SubsetFrequenciesUniform) {
  const std::size_t d = 5, k = 2, n = 100000;
  Stream rng(6);
  std::map<std::vector<std::size_t>, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) ++counts[sample_subset(d, k, rng)];
  ASSERT_EQ(counts.size(), 10u);
  const double p = 0.1, sd = std::sqrt(n * p * (1 - p));
  for (const auto& [s, c] : counts) EXPECT_LT(std::abs(c - n * p), 4 * sd);
}

TEST(RandComp, UnbiasedByEnumeration) {
  Stream gen(11);
  for (std::size_t d = 1; d <= 6; ++d)
    for (std::size_t k = 1; k <= d; ++k) {
      const Vec x = random_vec(gen, d);
      Vec mean(d, 0.0);
      std::size_t count = 0;
      std::vector<std::size_t> cur;
      for_each_subset(d, k, cur, 0, [&](const std::vector<std::size_t>& J) {
        axpy(1.0, densify(rand_comp_on(x, J)), mean);
        ++count;
      });
      scale(1.0 / static_cast<double>(count), mean);
      for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(mean[j], x[j], 1e-12);
    }
}

TEST(RandComp, SecondMomentByEnumeration) {
  Stream gen(12);
  for (std::size_t d = 1; d <= 6; ++d)
    for (std::size_t k = 1; k <= d; ++k) {
      const Vec x = random_vec(gen, d);
      double second = 0.0;
      std::size_t count = 0;
      std::vector<std::size_t> cur;
      for_each_subset(d, k, cur, 0, [&](const std::vector<std::size_t>& J) {
        second += distance_sq(densify(rand_comp_on(x, J)), x);
        ++count;
      });
      second /= static_cast<double>(count);
      const double expected = (static_cast<double>(d) / k - 1.0) * norm_sq(x);
      EXPECT_NEAR(second, expected, 1e-12 * std::max(1.0, expected)) << d << "," << k;
    }
}

TEST(RandComp, WithReplacementInvariants) {
  Stream gen(13);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t d = 1 + gen.uniform_index(10);
    const std::size_t k = 1 + gen.uniform_index(d);
    const Vec x = random_vec(gen, d);
    const CompressedMessage msg = rand_comp(x, k, gen, Sampling::with_replacement);
    ASSERT_TRUE(is_valid(msg));
    ASSERT_LE(msg.entries.size(), k);
    // Each entry is an integer multiple of (d/k) x_j, multiplicities summing to k.
    double total = 0.0;
    for (const Entry& e : msg.entries) {
      if (x[e.index] == 0.0) continue;
      const double c = e.value / (static_cast<double>(d) / k * x[e.index]);
      ASSERT_NEAR(c, std::round(c), 1e-9);
      total += std::round(c);
    }
    ASSERT_EQ(total, static_cast<double>(k));
  }
}

TEST(RandComp, WithReplacementUnbiased) {
  const Vec x{1.0, -2.0, 0.5};
  Stream rng(14);
  Vec mean(3, 0.0);
  const std::size_t n = 200000;
  for (std::size_t i = 0; i < n; ++i) accumulate(rand_comp(x, 2, rng, Sampling::with_replacement), mean);
  scale(1.0 / n, mean);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(mean[j], x[j], 0.03);
}

TEST(TopK, Example) {
  const Vec x{3.0, -5.0, 1.0, 2.0};
  const CompressedMessage msg = top_k(x, 2);
  EXPECT_EQ(densify(msg), (Vec{3.0, -5.0, 0.0, 0.0}));
}

TEST(TopK, TiesGoToLowerIndex) {
  const Vec x{1.0, -2.0, 2.0, 2.0};
  EXPECT_EQ(densify(top_k(x, 2)), (Vec{0.0, -2.0, 2.0, 0.0}));
  EXPECT_EQ(densify(top_k(Vec(5, 0.0), 3)), Vec(5, 0.0));
  EXPECT_EQ(top_k(Vec(5, 0.0), 3).entries.size(), 3u);
}

TEST(TopK, OptimalAmongAllSubsets) {
  Stream gen(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + gen.uniform_index(8);
    const std::size_t k = 1 + gen.uniform_index(d);
    Vec x = random_vec(gen, d);
    const double err = distance_sq(densify(top_k(x, k)), x);
    double best = INFINITY;
    std::vector<std::size_t> cur;
    for_each_subset(d, k, cur, 0, [&](const std::vector<std::size_t>& J) {
      double e = 0.0;
      std::set<std::size_t> in(J.begin(), J.end());
      for (std::size_t j = 0; j < d; ++j)
        if (!in.count(j)) e += x[j] * x[j];
      best = std::min(best, e);
    });
    ASSERT_NEAR(err, best, 1e-12);
  }
}

TEST(TopK, Deterministic) {
  Stream gen(22);
  const Vec x = random_vec(gen, 30);
  EXPECT_EQ(top_k(x, 7), top_k(x, 7));
}

TEST(Messages, FullMessageRoundTrip) {
  const Vec x{0.0, 1.5, -2.0};
  const CompressedMessage msg = full_message(x);
  EXPECT_EQ(densify(msg), x);
  EXPECT_EQ(wire_entries(msg), 3u);
  EXPECT_TRUE(is_valid(msg));
}

TEST(Messages, AccumulateAdds) {
  Vec out{1.0, 1.0, 1.0};
  accumulate(CompressedMessage{3, 1, {{1, 2.5}}}, out);
  EXPECT_EQ(out, (Vec{1.0, 3.5, 1.0}));
}

TEST(Messages, ValidityChecks) {
  EXPECT_FALSE(is_valid(CompressedMessage{3, 4, {}}));
  EXPECT_FALSE(is_valid(CompressedMessage{3, 1, {{0, 1.0}, {1, 1.0}}}));
  EXPECT_FALSE(is_valid(CompressedMessage{3, 2, {{2, 1.0}, {1, 1.0}}}));
  EXPECT_FALSE(is_valid(CompressedMessage{3, 2, {{3, 1.0}}}));
  EXPECT_TRUE(is_valid(CompressedMessage{3, 2, {{0, 1.0}, {2, 1.0}}}));
}

TEST(Messages, DebugDump) {
  std::ostringstream os;
  write_debug(CompressedMessage{4, 2, {{0, 2.0}, {3, 0.1}}}, os);
  EXPECT_EQ(os.str(), "0\t2\n3\t0.10000000000000001\n");
}

TEST(Sparsifiers, PoliciesMatchFreeFunctions) {
  Stream gen(31);
  const Vec g = random_vec(gen, 9);
  Stream a(5), b(5);
  const MessageTag tag{};
  EXPECT_EQ(RandCompSparsifier{}(g, 3, tag, a), rand_comp(g, 3, b));
  EXPECT_EQ(TopKSparsifier{}(g, 3, tag, a), top_k(g, 3));
  EXPECT_EQ(DenseSparsifier{}(g, 3, tag, a), full_message(g));
}
