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
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rnr/attention.hpp"
#include "rnr/flops.hpp"
#include "rnr/matching.hpp"
#include "rnr/rope.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

/// How discarded tokens affect their representative before attention.
enum class ReductionOp {
  discard,  ///< drop the token
  mean,     ///< average it into the representative
};

inline std::string_view to_string(ReductionOp op) { return op == ReductionOp::mean ? "mean" : "discard"; }

inline ReductionOp parse_reduction_op(std::string_view s) {
  if (s == "discard" || s == "prune") return ReductionOp::discard;
  if (s == "mean" || s == "merge") return ReductionOp::mean;
  throw std::invalid_argument("unknown reduction op '" + std::string(s) + "'");
}

/// Which tokens survive a reduction and where each discarded token is
/// restored from. Only source tokens are ever discarded, so every
/// representative is a kept destination.
struct ReductionPlan {
  Index original_len = 0;
  double rate = 0.0;
  /// Surviving token indices, ascending. Row r of a reduced sequence is token kept[r].
  std::vector<Index> kept;
  /// (discarded token, representative token), ascending by discarded token.
  std::vector<std::pair<Index, Index>> rep_of;
  /// For every original token, the reduced row that restores it.
  std::vector<Index> slot;

  Index reduced_len() const noexcept { return kept.size(); }
  bool is_identity() const noexcept { return rep_of.empty(); }

  static ReductionPlan identity(Index n) {
    ReductionPlan p;
    p.original_len = n;
    p.kept.resize(n);
    std::iota(p.kept.begin(), p.kept.end(), Index{0});
    p.slot = p.kept;
    return p;
  }

  /// Throws if the kept/discarded sets do not tile 0..n-1 or a
  /// representative is not kept.
  void validate() const {
    if (kept.size() + rep_of.size() != original_len || slot.size() != original_len)
      throw std::logic_error("ReductionPlan: kept + discarded != original length");
    std::vector<int> seen(original_len, 0), is_kept(original_len, 0);
    for (Index r = 0; r < kept.size(); ++r) {
      if (kept[r] >= original_len || seen[kept[r]]++) throw std::logic_error("ReductionPlan: bad kept index");
      if (slot[kept[r]] != r) throw std::logic_error("ReductionPlan: slot of kept token is wrong");
      is_kept[kept[r]] = 1;
    }
    for (auto [tok, rep] : rep_of) {
      if (tok >= original_len || seen[tok]++) throw std::logic_error("ReductionPlan: bad discarded index");
      if (rep >= original_len || !is_kept[rep] || slot[tok] != slot[rep])
        throw std::logic_error("ReductionPlan: representative is not a kept token");
    }
  }
};

/// Number of sources discarded at `rate`: floor(rate * n_src). The small
/// epsilon makes decimal rates such as 0.3 * 10 land on the intended integer.
inline Index discard_count(double rate, Index n_src) {
  return static_cast<Index>(std::floor(rate * static_cast<double>(n_src) + 1e-9));
}

/// Discards the first floor(rate * |src|) sources of the match's reduction
/// order; each maps to its best destination.
inline ReductionPlan build_plan(const MatchResult& match, const Partition& part, double rate) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("build_plan: rate " + std::to_string(rate) + " outside [0, 1)");
  if (match.best_dst.size() != part.src.size())
    throw std::invalid_argument("build_plan: match does not belong to this partition");
  const Index n = part.size();
  const Index k = discard_count(rate, part.src.size());
  std::vector<Index> rep(n, n);  // n marks "kept"
  for (Index o = 0; o < k; ++o) {
    const Index pos = match.reduce_order[o];
    rep[part.src[pos]] = part.dst[match.best_dst[pos]];
  }
  ReductionPlan p;
  p.original_len = n;
  p.rate = rate;
  p.slot.assign(n, 0);
  p.kept.reserve(n - k);
  p.rep_of.reserve(k);
  for (Index i = 0; i < n; ++i) {
    if (rep[i] == n) {
      p.slot[i] = p.kept.size();
      p.kept.push_back(i);
    } else {
      p.rep_of.emplace_back(i, rep[i]);
    }
  }
  for (auto [tok, r] : p.rep_of) p.slot[tok] = p.slot[r];
  return p;
}

template <class T>
Matrix<T> reduce(const Matrix<T>& tokens, const ReductionPlan& plan, ReductionOp op = ReductionOp::discard) {
  if (tokens.rows() != plan.original_len)
    throw std::invalid_argument("reduce: token rows " + std::to_string(tokens.rows()) + " != plan length " +
                                std::to_string(plan.original_len));
  Matrix<T> out = gather_rows(tokens, plan.kept);
  if (op == ReductionOp::mean && !plan.rep_of.empty()) {
    std::vector<Index> count(plan.kept.size(), 1);
    for (auto [tok, rep] : plan.rep_of) {
      const Index r = plan.slot[tok];
      auto dst = out.row(r);
      auto src = tokens.row(tok);
      for (Index c = 0; c < dst.size(); ++c) dst[c] += src[c];
      ++count[r];
    }
    for (Index r = 0; r < out.rows(); ++r)
      if (count[r] > 1) {
        const T inv = T{1} / static_cast<T>(count[r]);
        for (auto& x : out.row(r)) x *= inv;
      }
  }
  return out;
}

/// Back to full length: row i is the reduced row of i, or of its representative.
template <class T>
Matrix<T> restore(const Matrix<T>& reduced, const ReductionPlan& plan) {
  if (reduced.rows() != plan.reduced_len())
    throw std::invalid_argument("restore: reduced rows " + std::to_string(reduced.rows()) + " != plan length " +
                                std::to_string(plan.reduced_len()));
  return gather_rows(reduced, plan.slot);
}

template <class T>
struct ProjectionWeights {
  Matrix<T> wq, wk, wv;
};

template <class T>
Matrix<T> project(const Matrix<T>& x, const Matrix<T>& w, CostBreakdown* cost = nullptr) {
  if (cost) cost->projections += static_cast<std::uint64_t>(x.rows()) * x.cols() * w.cols();
  return matmul(x, w);
}

/// Reduce H, project, attend, restore. Row order of the reduced sequence is
/// the plan's kept order; RoPE (when given) uses the kept tokens' original
/// grid positions.
template <class T>
Matrix<T> attn_sym_rnr(const Matrix<T>& h, const ProjectionWeights<T>& w, const ReductionPlan& plan,
                       ReductionOp op = ReductionOp::discard, const AttentionOptions& opt = {},
                       const Rope3d* rope = nullptr, CostBreakdown* cost = nullptr) {
  const Matrix<T> hr = reduce(h, plan, op);
  Matrix<T> q = project(hr, w.wq, cost);
  Matrix<T> k = project(hr, w.wk, cost);
  Matrix<T> v = project(hr, w.wv, cost);
  if (rope) {
    q = rope->apply(std::move(q), std::span<const Index>(plan.kept));
    k = rope->apply(std::move(k), std::span<const Index>(plan.kept));
  }
  return restore(attn_plain(q, k, v, opt, cost), plan);
}

/// Queries and keys/values are reduced independently; K and V share one
/// plan. Only the query side is restored.
template <class T>
Matrix<T> attn_asym_rnr(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, const ReductionPlan& plan_q,
                        const ReductionPlan& plan_kv, ReductionOp op = ReductionOp::discard,
                        const AttentionOptions& opt = {}, CostBreakdown* cost = nullptr) {
  if (k.rows() != v.rows() || k.rows() != plan_kv.original_len)
    throw std::invalid_argument("attn_asym_rnr: K/V plan covers " + std::to_string(plan_kv.original_len) +
                                " rows but K has " + std::to_string(k.rows()) + " and V has " +
                                std::to_string(v.rows()));
  const Matrix<T> qr = plan_q.is_identity() ? q : reduce(q, plan_q, op);
  if (plan_kv.is_identity()) return restore(attn_plain(qr, k, v, opt, cost), plan_q);
  return restore(attn_plain(qr, reduce(k, plan_kv, op), reduce(v, plan_kv, op), opt, cost), plan_q);
}

}  // namespace rnr
