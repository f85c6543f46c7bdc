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

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

// Analytical multiply-add (MAC) cost model for attention with and without
// token reduction. The attention kernels charge the same quantities to a
// CostBreakdown as they run, so predictions and counters agree exactly.
//
// Conventions:
//   qk, av       m_q * m_kv * d each (summed over heads: heads * m_q * m_kv * d_head)
//   projections  3 * rows * d^2 for the Q/K/V projections
//   softmax      kSoftmaxCost per score entry, per head
//   matching     d per source/destination pair evaluated
// One FLOP is reported as 2 MACs.

namespace rnr {

inline constexpr std::uint64_t kSoftmaxCost = 5;

struct CostBreakdown {
  std::uint64_t qk_matmul = 0;
  std::uint64_t av_matmul = 0;
  std::uint64_t projections = 0;
  std::uint64_t matching = 0;
  std::uint64_t softmax = 0;

  std::uint64_t total() const noexcept {
    return qk_matmul + av_matmul + projections + matching + softmax;
  }
  std::uint64_t attention() const noexcept { return qk_matmul + av_matmul; }
  double flops() const noexcept { return 2.0 * static_cast<double>(total()); }

  CostBreakdown& operator+=(const CostBreakdown& o) noexcept {
    qk_matmul += o.qk_matmul;
    av_matmul += o.av_matmul;
    projections += o.projections;
    matching += o.matching;
    softmax += o.softmax;
    return *this;
  }
  friend CostBreakdown operator+(CostBreakdown a, const CostBreakdown& b) noexcept { return a += b; }
  friend bool operator==(const CostBreakdown&, const CostBreakdown&) = default;
};

/// MACs of one bipartite matching pass: r_d (1 - r_d) n^2 pairs, d each.
inline std::uint64_t matching_macs(std::uint64_t n, std::uint64_t d, double dst_ratio) {
  if (dst_ratio < 0.0 || dst_ratio > 1.0) throw std::invalid_argument("matching_macs: r_d outside [0,1]");
  const double nn = static_cast<double>(n);
  const auto pairs = static_cast<std::uint64_t>(std::llround(dst_ratio * (1.0 - dst_ratio) * nn * nn));
  return pairs * d;
}

inline CostBreakdown cost_plain(std::uint64_t n, std::uint64_t d, std::uint64_t heads = 1) {
  if (n < 1 || d < 1 || heads < 1) throw std::invalid_argument("cost_plain: n, d, heads must be >= 1");
  CostBreakdown c;
  c.qk_matmul = n * n * d;
  c.av_matmul = n * n * d;
  c.projections = 3 * n * d * d;
  c.softmax = kSoftmaxCost * n * n * heads;
  return c;
}

/// Asymmetric reduction: projections run at full length n, attention runs on
/// m_q queries against m_kv keys. `matching_runs` counts the BSM passes that
/// were actually computed (not served from the cache) for this call.
inline CostBreakdown cost_asym(std::uint64_t n, std::uint64_t d, std::uint64_t m_q, std::uint64_t m_kv,
                               std::uint64_t matching_runs, double dst_ratio, std::uint64_t heads = 1) {
  if (n < 1 || d < 1 || heads < 1) throw std::invalid_argument("cost_asym: n, d, heads must be >= 1");
  if (m_q < 1 || m_q > n || m_kv < 1 || m_kv > n)
    throw std::invalid_argument("cost_asym: reduced lengths must lie in [1, n]");
  CostBreakdown c;
  c.qk_matmul = m_q * m_kv * d;
  c.av_matmul = m_q * m_kv * d;
  c.projections = 3 * n * d * d;
  c.softmax = kSoftmaxCost * m_q * m_kv * heads;
  c.matching = matching_runs * matching_macs(n, d, dst_ratio);
  return c;
}

/// Symmetric reduction: H is shortened to m before projection.
inline CostBreakdown cost_sym(std::uint64_t n, std::uint64_t d, std::uint64_t m, std::uint64_t matching_runs,
                              double dst_ratio, std::uint64_t heads = 1) {
  if (m < 1 || m > n) throw std::invalid_argument("cost_sym: reduced length must lie in [1, n]");
  CostBreakdown c = cost_asym(n, d, m, m, matching_runs, dst_ratio, heads);
  c.projections = 3 * m * d * d;
  return c;
}

}  // namespace rnr
