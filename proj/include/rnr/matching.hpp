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
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rnr/detail/simd.hpp"
#include "rnr/flops.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

enum class SimilarityMetric { neg_euclidean, cosine, dot, random };

inline std::string_view to_string(SimilarityMetric m) {
  switch (m) {
    case SimilarityMetric::neg_euclidean: return "neg_euclidean";
    case SimilarityMetric::cosine: return "cosine";
    case SimilarityMetric::dot: return "dot";
    case SimilarityMetric::random: return "random";
  }
  return "?";
}

inline SimilarityMetric parse_metric(std::string_view s) {
  if (s == "neg_euclidean" || s == "euclidean") return SimilarityMetric::neg_euclidean;
  if (s == "cosine") return SimilarityMetric::cosine;
  if (s == "dot") return SimilarityMetric::dot;
  if (s == "random") return SimilarityMetric::random;
  throw std::invalid_argument("unknown similarity metric '" + std::string(s) + "'");
}

/// Chunk extent along (t, h, w).
struct Stride {
  Index t = 2;
  Index h = 2;
  Index w = 2;
  friend bool operator==(const Stride&, const Stride&) = default;
};

/// Source/destination split of a token grid. Both index lists are ascending.
struct Partition {
  std::vector<Index> dst;
  std::vector<Index> src;
  Stride stride;

  Index size() const noexcept { return dst.size() + src.size(); }
  double dst_ratio() const noexcept {
    return size() ? static_cast<double>(dst.size()) / static_cast<double>(size()) : 0.0;
  }
};

/// One destination per complete chunk; tokens in partial chunks at the far
/// edges are all sources.
inline Index destination_count(const GridShape& g, const Stride& s) {
  if (s.t == 0 || s.h == 0 || s.w == 0) throw std::invalid_argument("stride components must be >= 1");
  return (g.t / s.t) * (g.h / s.h) * (g.w / s.w);
}

inline double destination_ratio(const GridShape& g, const Stride& s) {
  return static_cast<double>(destination_count(g, s)) / static_cast<double>(g.size());
}

/// Picks one destination uniformly at random inside every complete chunk.
inline Partition partition_3d(const GridShape& g, const Stride& s, Rng& rng) {
  g.validate();
  const Index nd = destination_count(g, s);
  Partition p;
  p.stride = s;
  p.dst.reserve(nd);
  const Index chunk = s.t * s.h * s.w;
  for (Index ct = 0; ct < g.t / s.t; ++ct)
    for (Index ch = 0; ch < g.h / s.h; ++ch)
      for (Index cw = 0; cw < g.w / s.w; ++cw) {
        const Index off = rng.index(chunk);
        const Index ot = off / (s.h * s.w), oh = (off / s.w) % s.h, ow = off % s.w;
        p.dst.push_back(g.index(ct * s.t + ot, ch * s.h + oh, cw * s.w + ow));
      }
  std::sort(p.dst.begin(), p.dst.end());
  p.src.reserve(g.size() - nd);
  Index k = 0;
  for (Index i = 0; i < g.size(); ++i) {
    if (k < p.dst.size() && p.dst[k] == i)
      ++k;
    else
      p.src.push_back(i);
  }
  return p;
}

/// Per-source best destination. Positions index into Partition::src and
/// Partition::dst.
struct MatchResult {
  std::vector<Index> best_dst;
  std::vector<double> best_sim;
  /// Source positions by best_sim descending; equal similarities keep the
  /// lower source position first.
  std::vector<Index> reduce_order;
  std::uint64_t evaluations = 0;
  /// Pairs scored -inf because a cosine operand had zero norm.
  std::uint64_t degenerate_pairs = 0;
};

namespace detail {

template <class T>
T squared_distance(std::span<const T> a, std::span<const T> b) {
  T acc{0};
  for (Index k = 0; k < a.size(); ++k) {
    const T diff = a[k] - b[k];
    acc = std::fma(diff, diff, acc);
  }
  return acc;
}

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc{0};
  for (Index k = 0; k < a.size(); ++k) acc = std::fma(a[k], b[k], acc);
  return acc;
}

template <class T>
double cosine_from(T dotv, T na, T nb) {
  if (na == T{0} || nb == T{0}) return -std::numeric_limits<double>::infinity();
  return static_cast<double>(dotv / (na * nb));
}

}  // namespace detail

/// Similarity of two tokens under a deterministic metric. The matcher uses
/// exactly this arithmetic, so results can be checked for equality.
template <class T>
double similarity(SimilarityMetric m, std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw std::invalid_argument("similarity: dimension mismatch");
  switch (m) {
    case SimilarityMetric::neg_euclidean: return -static_cast<double>(std::sqrt(detail::squared_distance(a, b)));
    case SimilarityMetric::dot: return static_cast<double>(detail::dot(a, b));
    case SimilarityMetric::cosine: return detail::cosine_from(detail::dot(a, b), l2_norm(a), l2_norm(b));
    case SimilarityMetric::random: break;
  }
  throw std::invalid_argument("similarity: random metric has no pairwise value");
}

namespace detail {

inline void finish_order(MatchResult& r) {
  r.reduce_order.resize(r.best_sim.size());
  std::iota(r.reduce_order.begin(), r.reduce_order.end(), Index{0});
  std::stable_sort(r.reduce_order.begin(), r.reduce_order.end(),
                   [&](Index a, Index b) { return r.best_sim[a] > r.best_sim[b]; });
}

// Destinations are packed transposed in tiles of kWidth lanes so each source
// is scored against a whole tile per pass over the features.
template <class T>
void match_dense(const Matrix<T>& tokens, const Partition& part, SimilarityMetric metric, MatchResult& out) {
  using P = Pack<T>;
  constexpr Index W = P::kWidth;
  const Index d = tokens.cols();
  const Index nd = part.dst.size();
  const Index ntile = (nd + W - 1) / W;
  std::vector<T> tiles(ntile * d * W, T{0});
  for (Index j = 0; j < nd; ++j) {
    auto row = tokens.row(part.dst[j]);
    T* t = tiles.data() + (j / W) * d * W;
    for (Index k = 0; k < d; ++k) t[k * W + j % W] = row[k];
  }
  std::vector<T> dnorm;
  if (metric == SimilarityMetric::cosine) {
    dnorm.resize(nd);
    for (Index j = 0; j < nd; ++j) dnorm[j] = l2_norm(tokens.row(part.dst[j]));
  }
  const bool euclid = metric == SimilarityMetric::neg_euclidean;
  T lanes[W];
  for (Index i = 0; i < part.src.size(); ++i) {
    auto a = tokens.row(part.src[i]);
    const T na = metric == SimilarityMetric::cosine ? l2_norm(a) : T{1};
    double best = -std::numeric_limits<double>::infinity();
    Index best_j = 0;
    bool have = false;
    for (Index t = 0; t < ntile; ++t) {
      const T* tile = tiles.data() + t * d * W;
      P acc = P::zero();
      for (Index k = 0; k < d; ++k) {
        const P col = P::load(tile + k * W);
        const P av = P::broadcast(a[k]);
        if (euclid) {
          const P diff = av - col;
          acc.fma(diff, diff);
        } else {
          acc.fma(av, col);
        }
      }
      acc.store(lanes);
      const Index lim = std::min(W, nd - t * W);
      for (Index l = 0; l < lim; ++l) {
        const Index j = t * W + l;
        double sim;
        if (euclid) {
          sim = -static_cast<double>(std::sqrt(lanes[l]));
        } else if (metric == SimilarityMetric::dot) {
          sim = static_cast<double>(lanes[l]);
        } else {
          sim = cosine_from(lanes[l], na, dnorm[j]);
          if (na == T{0} || dnorm[j] == T{0}) ++out.degenerate_pairs;
        }
        if (!have || sim > best) {
          best = sim;
          best_j = j;
          have = true;
        }
      }
    }
    out.best_dst[i] = best_j;
    out.best_sim[i] = best;
  }
}

}  // namespace detail

/// Bipartite matching: every source token is paired with its most similar
/// destination (lowest destination position on ties). The `random` metric
/// draws i.i.d. uniform similarities from `rng`, source-major.
template <class T>
MatchResult pairwise_best_match(const Matrix<T>& tokens, const Partition& part, SimilarityMetric metric, Rng& rng,
                                CostBreakdown* cost = nullptr) {
  if (tokens.rows() != part.size())
    throw std::invalid_argument("pairwise_best_match: token rows " + std::to_string(tokens.rows()) +
                                " != partition size " + std::to_string(part.size()));
  if (part.dst.empty() && !part.src.empty())
    throw std::invalid_argument("pairwise_best_match: partition has no destinations");
  MatchResult r;
  const Index ns = part.src.size(), nd = part.dst.size();
  r.best_dst.assign(ns, 0);
  r.best_sim.assign(ns, 0.0);
  r.evaluations = static_cast<std::uint64_t>(ns) * nd;
  if (metric == SimilarityMetric::random) {
    for (Index i = 0; i < ns; ++i) {
      double best = -1.0;
      for (Index j = 0; j < nd; ++j) {
        const double s = rng.uniform();
        if (s > best) {
          best = s;
          r.best_dst[i] = j;
        }
      }
      r.best_sim[i] = best;
    }
  } else if (ns > 0) {
    detail::match_dense(tokens, part, metric, r);
  }
  detail::finish_order(r);
  if (cost) cost->matching += r.evaluations * tokens.cols();
  return r;
}

/// Linear-interpolation percentile of an ascending sequence, q in [0, 1].
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty sequence");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<Index>(std::floor(pos));
  const Index hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

/// Clamps to the [5th, 95th] percentile band, then min-max scales to [0, 1].
/// A constant input maps to 0.5 everywhere.
inline std::vector<double> standardize_profile(std::span<const double> raw) {
  if (raw.size() < 2) throw std::invalid_argument("standardize_profile: need at least two values");
  std::vector<double> sorted(raw.begin(), raw.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = percentile_sorted(sorted, 0.05);
  const double hi = percentile_sorted(sorted, 0.95);
  std::vector<double> out(raw.size());
  if (!(hi > lo)) {
    std::fill(out.begin(), out.end(), 0.5);
    return out;
  }
  for (Index i = 0; i < raw.size(); ++i) out[i] = (std::clamp(raw[i], lo, hi) - lo) / (hi - lo);
  return out;
}

}  // namespace rnr
