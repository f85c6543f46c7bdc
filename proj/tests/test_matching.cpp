// Copyright 2026 The rnr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <map>
#include <set>
#include <tuple>

#include "oracles.hpp"
#include "rnr/matching.hpp"

using namespace rnr;

TEST(Partition, OneDestinationPerCompleteChunk) {
  Rng rng(1);
  const GridShape g{5, 6, 7};
  const Stride s{2, 2, 3};
  const auto p = partition_3d(g, s, rng);
  EXPECT_EQ(p.dst.size(), 2u * 3 * 2);
  EXPECT_EQ(p.size(), g.size());
  std::set<Index> all(p.dst.begin(), p.dst.end());
  all.insert(p.src.begin(), p.src.end());
  EXPECT_EQ(all.size(), g.size());
  EXPECT_TRUE(std::is_sorted(p.src.begin(), p.src.end()));
  // Each complete chunk holds exactly one destination; edge remainders hold none.
  std::map<std::tuple<Index, Index, Index>, int> per_chunk;
  for (Index d : p.dst) {
    const auto c = g.coord(d);
    ASSERT_LT(c.t, 4u);
    ASSERT_LT(c.h, 6u);
    ASSERT_LT(c.w, 6u);
    ++per_chunk[{c.t / 2, c.h / 2, c.w / 3}];
  }
  EXPECT_EQ(per_chunk.size(), 12u);
  for (const auto& [k, n] : per_chunk) EXPECT_EQ(n, 1);
}

TEST(Partition, SeedDeterminesDestinations) {
  const GridShape g{4, 8, 8};
  Rng a(5), b(5), c(6);
  const auto pa = partition_3d(g, {}, a), pb = partition_3d(g, {}, b), pc = partition_3d(g, {}, c);
  EXPECT_EQ(pa.dst, pb.dst);
  EXPECT_NE(pa.dst, pc.dst);
}

TEST(Partition, StrideLargerThanGridHasNoDestinations) {
  Rng rng(1);
  const auto p = partition_3d({1, 2, 2}, {2, 2, 2}, rng);
  EXPECT_TRUE(p.dst.empty());
  EXPECT_EQ(p.src.size(), 4u);
  EXPECT_THROW(destination_count({2, 2, 2}, {0, 1, 1}), std::invalid_argument);
}

TEST(Partition, TabulatedDestinationRatios) {
  struct Row {
    Stride s;
    double percent;
  };
  const Row rows[] = {{{1, 2, 2}, 24.44}, {{2, 2, 2}, 11.28}, {{3, 2, 2}, 7.52},
                      {{4, 2, 2}, 5.64},  {{2, 3, 3}, 5.13},  {{2, 4, 4}, 2.63}};
  const GridShape g{13, 30, 45};
  for (const auto& r : rows) {
    const double ours = 100.0 * destination_ratio(g, r.s);
    EXPECT_NEAR(ours, 100.0 * oracle::dst_ratio(13, 30, 45, r.s.t, r.s.h, r.s.w), 1e-12);
    EXPECT_NEAR(ours, r.percent, 0.005);
  }
}

TEST(Similarity, MetricDefinitions) {
  const std::vector<double> a{3, 0}, b{0, 4}, z{0, 0};
  EXPECT_DOUBLE_EQ(similarity<double>(SimilarityMetric::neg_euclidean, a, b), -5.0);
  EXPECT_DOUBLE_EQ(similarity<double>(SimilarityMetric::dot, a, b), 0.0);
  EXPECT_DOUBLE_EQ(similarity<double>(SimilarityMetric::cosine, a, a), 1.0);
  EXPECT_EQ(similarity<double>(SimilarityMetric::cosine, a, z), -std::numeric_limits<double>::infinity());
  EXPECT_THROW(similarity<double>(SimilarityMetric::random, a, b), std::invalid_argument);
  EXPECT_EQ(parse_metric("cosine"), SimilarityMetric::cosine);
  EXPECT_THROW(parse_metric("manhattan"), std::invalid_argument);
}

template <class T>
void expect_matches_oracle(const Matrix<T>& x, const Partition& part, SimilarityMetric m) {
  Rng rng(0);
  const auto r = pairwise_best_match(x, part, m, rng);
  const auto o = oracle::bsm(x, part, m);
  ASSERT_EQ(r.best_dst, o.best_dst);
  ASSERT_EQ(r.best_sim, o.best_sim);
  ASSERT_EQ(r.reduce_order, o.order);
  EXPECT_EQ(r.evaluations, part.src.size() * part.dst.size());
}

TEST(Bsm, EqualsExhaustiveOracleOnRandomInstances) {
  Rng gen(77);
  const SimilarityMetric metrics[] = {SimilarityMetric::neg_euclidean, SimilarityMetric::cosine,
                                      SimilarityMetric::dot};
  for (int trial = 0; trial < 120; ++trial) {
    const GridShape g{1 + gen.index(3), 2 + gen.index(5), 2 + gen.index(6)};
    const Stride s{1 + gen.index(2), 1 + gen.index(2), 1 + gen.index(2)};
    Rng pr = gen.derive(trial);
    const auto part = partition_3d(g, s, pr);
    if (part.dst.empty()) continue;
    const Index d = 1 + gen.index(40);
    auto x = random_normal(g.size(), d, gen);
    if (trial % 3 == 0) {
      // Plant exact duplicates and quantize so ties are common.
      for (auto& v : x.data()) v = std::round(v * 2) / 2;
    }
    for (auto m : metrics) {
      expect_matches_oracle(x, part, m);
      expect_matches_oracle(x.template cast<float>(), part, m);
    }
  }
}

TEST(Bsm, TiesGoToLowestIndex) {
  // All tokens identical: every source ties across all destinations.
  Rng rng(3);
  const auto part = partition_3d({2, 4, 4}, {}, rng);
  const Matrix<double> x(32, 5, 1.0);
  const auto r = pairwise_best_match(x, part, SimilarityMetric::neg_euclidean, rng);
  for (Index i = 0; i < r.best_dst.size(); ++i) EXPECT_EQ(r.best_dst[i], 0u);
  for (Index i = 0; i < r.reduce_order.size(); ++i) EXPECT_EQ(r.reduce_order[i], i);
}

TEST(Bsm, DuplicatesRankFirst) {
  Rng rng(4);
  const GridShape g{2, 4, 4};
  const auto part = partition_3d(g, {}, rng);
  auto x = random_normal(g.size(), 8, rng);
  // Make source 3 an exact copy of destination 1.
  auto src = x.row(part.dst[1]);
  std::copy(src.begin(), src.end(), x.row(part.src[3]).begin());
  const auto r = pairwise_best_match(x, part, SimilarityMetric::neg_euclidean, rng);
  EXPECT_EQ(r.reduce_order[0], 3u);
  EXPECT_EQ(r.best_dst[3], 1u);
  EXPECT_EQ(r.best_sim[3], 0.0);
}

TEST(Bsm, ZeroNormCosineIsCountedAndRankedLast) {
  Rng rng(5);
  const GridShape g{1, 2, 4};
  const auto part = partition_3d(g, {1, 2, 2}, rng);
  auto x = random_normal(g.size(), 3, rng);
  for (auto& v : x.row(part.src[0])) v = 0;
  const auto r = pairwise_best_match(x, part, SimilarityMetric::cosine, rng);
  EXPECT_EQ(r.degenerate_pairs, part.dst.size());
  EXPECT_EQ(r.best_sim[0], -std::numeric_limits<double>::infinity());
  EXPECT_EQ(r.reduce_order.back(), 0u);
}

TEST(Bsm, RandomMetricIsSeeded) {
  const GridShape g{2, 4, 4};
  Rng p(1);
  const auto part = partition_3d(g, {}, p);
  Rng gen(2);
  const auto x = random_normal(g.size(), 4, gen);
  Rng a(9), b(9);
  const auto ra = pairwise_best_match(x, part, SimilarityMetric::random, a);
  const auto rb = pairwise_best_match(x, part, SimilarityMetric::random, b);
  EXPECT_EQ(ra.best_dst, rb.best_dst);
  EXPECT_EQ(ra.best_sim, rb.best_sim);
  for (double s : ra.best_sim) {
    EXPECT_GE(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Bsm, ChargesMatchingCost) {
  Rng rng(6);
  const GridShape g{2, 4, 6};
  const auto part = partition_3d(g, {}, rng);
  const auto x = random_normal(g.size(), 10, rng);
  CostBreakdown c;
  pairwise_best_match(x, part, SimilarityMetric::neg_euclidean, rng, &c);
  EXPECT_EQ(c.matching, part.src.size() * part.dst.size() * 10);
  EXPECT_EQ(c.matching, matching_macs(g.size(), 10, part.dst_ratio()));
}

TEST(Bsm, RejectsMismatchedTokens) {
  Rng rng(7);
  const auto part = partition_3d({2, 2, 2}, {}, rng);
  EXPECT_THROW(pairwise_best_match(Matrix<double>(7, 2), part, SimilarityMetric::dot, rng), std::invalid_argument);
  Partition none;
  none.src = {0, 1};
  EXPECT_THROW(pairwise_best_match(Matrix<double>(2, 2), none, SimilarityMetric::dot, rng), std::invalid_argument);
}

TEST(Standardize, ClampsAndScales) {
  std::vector<double> raw;
  for (int i = 0; i <= 100; ++i) raw.push_back(i);
  const auto s = standardize_profile(raw);
  // 5th and 95th percentiles of 0..100 are 5 and 95.
  EXPECT_DOUBLE_EQ(s[0], 0.0);
  EXPECT_DOUBLE_EQ(s[5], 0.0);
  EXPECT_DOUBLE_EQ(s[50], 0.5);
  EXPECT_DOUBLE_EQ(s[95], 1.0);
  EXPECT_DOUBLE_EQ(s[100], 1.0);
  for (double v : s) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Standardize, ConstantInputMapsToHalf) {
  const std::vector<double> raw(7, 3.25);
  for (double v : standardize_profile(raw)) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(standardize_profile(std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Standardize, MonotoneInInput) {
  Rng rng(8);
  std::vector<double> raw(50);
  for (auto& v : raw) v = rng.normal();
  const auto s = standardize_profile(raw);
  for (Index i = 0; i < raw.size(); ++i)
    for (Index j = 0; j < raw.size(); ++j)
      if (raw[i] < raw[j]) {
        EXPECT_LE(s[i], s[j]);
      }
}

TEST(Percentile, LinearInterpolation) {
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(percentile_sorted(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0.25), 1.75);
}
