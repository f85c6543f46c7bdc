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

#include "oracles.hpp"
#include "rnr/flops.hpp"
#include "rnr/toydit.hpp"

using namespace rnr;

TEST(CostPlain, Formulas) {
  const auto c = cost_plain(1, 8);
  EXPECT_EQ(c.qk_matmul, 8u);
  EXPECT_EQ(c.av_matmul, 8u);
  EXPECT_EQ(c.projections, 3u * 64);
  EXPECT_EQ(c.softmax, 5u);
  EXPECT_EQ(c.total(), 8u + 8 + 192 + 5);
  EXPECT_EQ(c.flops(), 2.0 * static_cast<double>(c.total()));
  EXPECT_THROW(cost_plain(0, 4), std::invalid_argument);
}

TEST(CostPlain, QuadraticInSequenceLength) {
  for (std::uint64_t n : {3, 17, 100, 2048})
    EXPECT_EQ(cost_plain(2 * n, 64).attention(), 4 * cost_plain(n, 64).attention());
}

TEST(CostAsym, FullLengthWithoutMatchingIsPlain) {
  for (std::uint64_t n : {1, 9, 64, 500}) EXPECT_EQ(cost_asym(n, 16, n, n, 0, 0.11), cost_plain(n, 16));
}

TEST(CostAsym, LinearInQueryLength) {
  const auto full = cost_asym(128, 32, 128, 128, 0, 0.125);
  const auto half = cost_asym(128, 32, 64, 128, 0, 0.125);
  EXPECT_EQ(2 * half.qk_matmul, full.qk_matmul);
  EXPECT_EQ(2 * half.av_matmul, full.av_matmul);
  EXPECT_EQ(half.projections, full.projections);
}

TEST(CostAsym, NeverExceedsPlainAttention) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::uint64_t n = 1 + rng.index(300), d = 1 + rng.index(64);
    const std::uint64_t mq = 1 + rng.index(n), mkv = 1 + rng.index(n);
    const auto a = cost_asym(n, d, mq, mkv, 0, 0.1).attention();
    const auto p = cost_plain(n, d).attention();
    EXPECT_LE(a, p);
    if (mq < n || mkv < n) {
      EXPECT_LT(a, p);
    }
  }
}

TEST(CostAsym, RejectsInvalidLengths) {
  EXPECT_THROW(cost_asym(10, 4, 0, 10, 0, 0.1), std::invalid_argument);
  EXPECT_THROW(cost_asym(10, 4, 10, 11, 0, 0.1), std::invalid_argument);
  EXPECT_THROW(cost_sym(10, 4, 11, 0, 0.1), std::invalid_argument);
  EXPECT_THROW(matching_macs(10, 4, 1.5), std::invalid_argument);
}

TEST(CostSym, ProjectsOnlyKeptTokens) {
  const auto c = cost_sym(100, 8, 40, 1, 0.25);
  EXPECT_EQ(c.projections, 3u * 40 * 64);
  EXPECT_EQ(c.qk_matmul, 40u * 40 * 8);
  EXPECT_EQ(c.matching, 25u * 75 * 8);
}

TEST(Matching, PairCountTimesWidth) {
  EXPECT_EQ(matching_macs(2048, 64, 0.125), 256u * 1792 * 64);
  EXPECT_EQ(matching_macs(100, 3, 0.0), 0u);
  EXPECT_EQ(matching_macs(100, 3, 1.0), 0u);
}

TEST(Matching, CostPeaksAtHalfDestinations) {
  const std::uint64_t n = 1000, d = 4;
  const auto peak = matching_macs(n, d, 0.5);
  for (int i = 1; i < 100; ++i) {
    const double r = i / 100.0;
    EXPECT_LE(matching_macs(n, d, r), peak);
    if (i < 50) {
      EXPECT_LT(matching_macs(n, d, r), matching_macs(n, d, (i + 1) / 100.0));
    }
  }
}

TEST(Counters, PlainPipelineMatchesHandCount) {
  PipelineConfig cfg;
  cfg.grid = {4, 4, 4};
  cfg.d = 16;
  cfg.blocks = 1;
  cfg.timesteps = 1;
  const auto rep = run_pipeline(cfg);
  // n = 64, d = 16.
  EXPECT_EQ(rep.measured.qk_matmul, 65536u);
  EXPECT_EQ(rep.measured.av_matmul, 65536u);
  EXPECT_EQ(rep.measured.projections, 49152u);
  EXPECT_EQ(rep.measured.softmax, 20480u);
  EXPECT_EQ(rep.measured.matching, 0u);
  EXPECT_EQ(rep.measured, cost_plain(64, 16));
}

TEST(Counters, CachedMatchingChargedOncePerWindow) {
  PipelineConfig cfg;
  cfg.grid = {4, 4, 4};
  cfg.d = 16;
  cfg.blocks = 2;
  cfg.timesteps = 30;
  cfg.mode = RnrMode::asym;
  cfg.schedule = ScheduleConfig::uniform(0.5, 0.0);
  const auto rep = run_pipeline(cfg);
  const double r_d = destination_ratio(cfg.grid, {});
  EXPECT_DOUBLE_EQ(r_d, 0.125);
  for (Index b = 0; b < 2; ++b) {
    std::uint64_t runs = 0;
    for (const auto& r : rep.blocks)
      if (r.b == b) runs += r.matching_runs;
    EXPECT_EQ(runs, 6u);
  }
  EXPECT_EQ(rep.measured.matching, 2 * 6 * matching_macs(64, 16, r_d));
  EXPECT_EQ(rep.measured.matching, 2u * 6 * 8 * 56 * 16);
  EXPECT_EQ(rep.measured, rep.predicted);
  // n_src = 56, half of them discarded: 36 queries attend 64 keys.
  EXPECT_EQ(rep.blocks[0].m_q, 36u);
  EXPECT_EQ(rep.blocks[0].m_kv, 64u);
  EXPECT_EQ(rep.blocks[0].measured.qk_matmul, 36u * 64 * 16);
}

TEST(Counters, HeadsScaleOnlySoftmax) {
  PipelineConfig cfg;
  cfg.grid = {4, 4, 4};
  cfg.d = 24;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.timesteps = 1;
  const auto rep = run_pipeline(cfg);
  EXPECT_EQ(rep.measured, cost_plain(64, 24, 2));
  EXPECT_EQ(rep.measured.softmax, 2u * 5 * 64 * 64);
}
