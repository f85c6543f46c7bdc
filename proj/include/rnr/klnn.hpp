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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnr/reduction.hpp"
#include "rnr/tensor.hpp"

// k-nearest-neighbour estimate of D(P' || P) from samples X' ~ P' (the
// "reduced" set, l' points) and X ~ P (the "original" set, l points):
//
//   D = (d / l') * sum_i log(nu_k(i) / rho_k(i)) + log(l / (l' - 1))
//
// rho_k(i) is the k-th NN distance of X'_i within X' (excluding itself) and
// nu_k(i) the k-th NN distance of X'_i within X. Neighbour search is brute
// force. Zero distances are floored at kDistanceFloor.

namespace rnr {

inline constexpr double kDistanceFloor = 1e-12;

struct SampleSet {
  Matrix<double> points;

  SampleSet() = default;
  explicit SampleSet(Matrix<double> pts) : points(std::move(pts)) {
    if (points.rows() < 2) throw std::invalid_argument("SampleSet: need at least two points");
    if (!points.all_finite()) throw std::invalid_argument("SampleSet: non-finite coordinate");
  }
  template <class T>
  static SampleSet from(const Matrix<T>& m) {
    return SampleSet(m.template cast<double>());
  }

  Index size() const noexcept { return points.rows(); }
  Index dim() const noexcept { return points.cols(); }
};

struct KlEstimate {
  double value = 0.0;
  Index k = 1;
  Index l = 0;
  Index l_prime = 0;
  Index d = 0;
  /// Distances that were exactly zero and replaced by kDistanceFloor.
  std::uint64_t floored = 0;
};

namespace detail {

// k-th smallest distance from `query` to rows of `pts`, skipping row `skip`.
// Selection runs on squared distances; sqrt is monotone, so taking it last
// gives the same value as sorting true distances.
inline double kth_distance(const Matrix<double>& pts, std::span<const double> query, Index k,
                           std::optional<Index> skip, std::vector<double>& buf) {
  buf.clear();
  for (Index j = 0; j < pts.rows(); ++j) {
    if (skip && *skip == j) continue;
    buf.push_back(squared_distance(query, pts.row(j)));
  }
  if (k == 0 || k > buf.size()) throw std::invalid_argument("knn: k exceeds usable point count");
  if (k == 1) return std::sqrt(*std::min_element(buf.begin(), buf.end()));
  std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k - 1), buf.end());
  return std::sqrt(buf[k - 1]);
}

}  // namespace detail

/// Exact k-th nearest-neighbour Euclidean distance from `query` to the set.
/// `exclude` removes one point (by row index) from consideration.
inline double knn_distance(const SampleSet& set, std::span<const double> query, Index k,
                           std::optional<Index> exclude = std::nullopt) {
  if (query.size() != set.dim()) throw std::invalid_argument("knn_distance: dimension mismatch");
  if (exclude && *exclude >= set.size()) throw std::out_of_range("knn_distance: excluded index out of range");
  std::vector<double> buf;
  return detail::kth_distance(set.points, query, k, exclude, buf);
}

/// Estimator core. When `self_in_original` is given, reduced point i is a
/// copy of original row self_in_original[i] and that row is skipped in the
/// nu search.
inline KlEstimate kl_estimate(const SampleSet& reduced, const SampleSet& original, Index k,
                              std::span<const Index> self_in_original) {
  if (k < 1) throw std::invalid_argument("kl_estimate: k must be >= 1");
  if (reduced.dim() != original.dim()) throw std::invalid_argument("kl_estimate: dimension mismatch");
  const Index lp = reduced.size(), l = original.size();
  const Index usable_l = self_in_original.empty() ? l : l - 1;
  if (lp < k + 1 || usable_l < k)
    throw std::invalid_argument("kl_estimate: need l' >= k+1 and l >= k (l'=" + std::to_string(lp) +
                                ", l=" + std::to_string(l) + ", k=" + std::to_string(k) + ")");
  if (!self_in_original.empty() && self_in_original.size() != lp)
    throw std::invalid_argument("kl_estimate: self index list must cover every reduced point");
  KlEstimate est;
  est.k = k;
  est.l = l;
  est.l_prime = lp;
  est.d = reduced.dim();
  std::vector<double> buf;
  buf.reserve(std::max(l, lp));
  double acc = 0.0;
  for (Index i = 0; i < lp; ++i) {
    auto x = reduced.points.row(i);
    double rho = detail::kth_distance(reduced.points, x, k, i, buf);
    std::optional<Index> skip;
    if (!self_in_original.empty()) skip = self_in_original[i];
    double nu = detail::kth_distance(original.points, x, k, skip, buf);
    if (rho == 0.0) {
      rho = kDistanceFloor;
      ++est.floored;
    }
    if (nu == 0.0) {
      nu = kDistanceFloor;
      ++est.floored;
    }
    acc += std::log(nu / rho);
  }
  est.value = static_cast<double>(est.d) / static_cast<double>(lp) * acc +
              std::log(static_cast<double>(l) / static_cast<double>(lp - 1));
  return est;
}

inline KlEstimate kl_estimate(const SampleSet& reduced, const SampleSet& original, Index k = 1) {
  return kl_estimate(reduced, original, k, {});
}

/// Estimated divergence of the kept tokens from the full token set. Each
/// kept token's own original copy is excluded from its nu search, so an
/// identity plan scores log(n / (n - 1)).
template <class T>
double score_reduction(const Matrix<T>& original_tokens, const ReductionPlan& plan, Index k = 1) {
  if (original_tokens.rows() != plan.original_len)
    throw std::invalid_argument("score_reduction: plan does not match token count");
  if (plan.reduced_len() <= k) throw std::invalid_argument("score_reduction: reduced length must exceed k");
  const SampleSet original = SampleSet::from(original_tokens);
  const SampleSet reduced(gather_rows(original.points, plan.kept));
  return kl_estimate(reduced, original, k, plan.kept).value;
}

/// Volume of the d-dimensional unit ball, pi^(d/2) / Gamma(d/2 + 1).
inline double unit_ball_volume(Index d) {
  const double h = static_cast<double>(d) / 2.0;
  return std::exp(h * std::log(3.14159265358979323846) - std::lgamma(h + 1.0));
}

/// k-NN density estimate k / (N * c1(d) * r_k^d) at `query`, where N counts
/// the points searched (one fewer when `exclude` is set).
inline double knn_density(const SampleSet& set, std::span<const double> query, Index k,
                          std::optional<Index> exclude = std::nullopt) {
  const double r = knn_distance(set, query, k, exclude);
  const double count = static_cast<double>(set.size() - (exclude ? 1 : 0));
  const double d = static_cast<double>(set.dim());
  return static_cast<double>(k) / count / (unit_ball_volume(set.dim()) * std::pow(r, d));
}

}  // namespace rnr
