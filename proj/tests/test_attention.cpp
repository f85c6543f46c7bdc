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

#include <tuple>

#include "oracles.hpp"
#include "rnr/attention.hpp"

using namespace rnr;

class AttentionShapes : public ::testing::TestWithParam<std::tuple<Index, Index, Index, Index>> {};

TEST_P(AttentionShapes, MatchesExtendedPrecisionOracle) {
  const auto [mq, mkv, d, heads] = GetParam();
  Rng rng(mq * 131 + mkv * 7 + d + heads);
  const auto q = random_normal(mq, d, rng, 2.0), k = random_normal(mkv, d, rng, 2.0), v = random_normal(mkv, d, rng);
  for (bool scaled : {true, false}) {
    const auto out = attn_plain(q, k, v, {heads, scaled});
    const auto ref = oracle::attention(q, k, v, heads, scaled);
    EXPECT_LE(max_abs_diff(out, ref), 1e-12) << "scaled=" << scaled;
    const auto out32 = attn_plain(q.cast<float>(), k.cast<float>(), v.cast<float>(), {heads, scaled});
    EXPECT_LE(max_abs_diff(out32.cast<double>(), ref), 5e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, AttentionShapes,
                         ::testing::Values(std::make_tuple(1, 1, 4, 1), std::make_tuple(3, 5, 6, 1),
                                           std::make_tuple(17, 33, 16, 2), std::make_tuple(40, 300, 12, 3),
                                           std::make_tuple(65, 257, 64, 4), std::make_tuple(8, 513, 20, 1),
                                           std::make_tuple(129, 31, 8, 1)));

TEST(Attention, RowsOfUniformKeysAverageValues) {
  Matrix<double> q(3, 4, 0.5), k(5, 4, 1.0);
  Rng rng(2);
  const auto v = random_normal(5, 4, rng);
  const auto out = attn_plain(q, k, v);
  for (Index c = 0; c < 4; ++c) {
    double mean = 0;
    for (Index j = 0; j < 5; ++j) mean += v(j, c) / 5;
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(out(i, c), mean, 1e-14);
  }
}

TEST(Attention, HugeLogitsStayFinite) {
  Rng rng(3);
  const auto q = random_normal(20, 8, rng, 300.0), k = random_normal(40, 8, rng, 300.0), v = random_normal(40, 8, rng);
  const auto out = attn_plain(q, k, v);
  EXPECT_TRUE(out.all_finite());
  EXPECT_LE(max_abs_diff(out, oracle::attention(q, k, v)), 1e-9);
}

TEST(Attention, ChargesExactCosts) {
  Rng rng(4);
  const auto q = random_normal(10, 8, rng), k = random_normal(7, 8, rng), v = random_normal(7, 8, rng);
  CostBreakdown c;
  attn_plain(q, k, v, {2, true}, &c);
  EXPECT_EQ(c.qk_matmul, 10u * 7 * 8);
  EXPECT_EQ(c.av_matmul, 10u * 7 * 8);
  EXPECT_EQ(c.softmax, kSoftmaxCost * 10 * 7 * 2);
  EXPECT_EQ(c.projections, 0u);
}

TEST(Attention, RejectsBadShapes) {
  Matrix<double> q(2, 4), k(3, 4), v(2, 4);
  EXPECT_THROW(attn_plain(q, k, v), std::invalid_argument);
  EXPECT_THROW(attn_plain(q, k, Matrix<double>(3, 4), {3, true}), std::invalid_argument);
  EXPECT_THROW(attn_plain(q, Matrix<double>(3, 5), Matrix<double>(3, 5)), std::invalid_argument);
}

TEST(Attention, DeterministicAcrossCalls) {
  Rng rng(5);
  const auto q = random_normal(50, 16, rng), k = random_normal(70, 16, rng), v = random_normal(70, 16, rng);
  EXPECT_EQ(attn_plain(q, k, v), attn_plain(q, k, v));
}
