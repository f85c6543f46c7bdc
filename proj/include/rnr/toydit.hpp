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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rnr/attention.hpp"
#include "rnr/flops.hpp"
#include "rnr/klnn.hpp"
#include "rnr/matching.hpp"
#include "rnr/reduction.hpp"
#include "rnr/rope.hpp"
#include "rnr/schedule.hpp"
#include "rnr/tensor.hpp"

// Synthetic denoising loop. Each step runs a stack of B residual attention
// blocks over the token grid,
//
//   block_b(h) = h + attn(rmsnorm(h) Wq_b, rmsnorm(h) Wk_b, rmsnorm(h) Wv_b)
//
// with 3D RoPE on queries and keys, then blends x <- x - gamma * stack(x).
// Weights are fixed Gaussian draws from the seed. Every cost the attention
// path incurs is counted, and a closed-form prediction is kept alongside.

namespace rnr {

/// Pipeline setup problems (bad sizes, unusable schedule or profile).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A run broke one of its own guarantees.
struct InvariantError : std::logic_error {
  using std::logic_error::logic_error;
};

enum class RnrMode { none, sym, asym };
enum class Precision { f64, f32 };
enum class TokenInit { gaussian, clustered };

inline std::string_view to_string(RnrMode m) {
  switch (m) {
    case RnrMode::none: return "none";
    case RnrMode::sym: return "sym";
    case RnrMode::asym: return "asym";
  }
  return "?";
}
inline RnrMode parse_mode(std::string_view s) {
  if (s == "none") return RnrMode::none;
  if (s == "sym") return RnrMode::sym;
  if (s == "asym") return RnrMode::asym;
  throw ConfigError("unknown rnr mode '" + std::string(s) + "' (expected none, sym or asym)");
}
inline std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }
inline Precision parse_precision(std::string_view s) {
  if (s == "f64" || s == "double") return Precision::f64;
  if (s == "f32" || s == "float") return Precision::f32;
  throw ConfigError("unknown precision '" + std::string(s) + "'");
}
inline std::string_view to_string(TokenInit i) { return i == TokenInit::clustered ? "clustered" : "gaussian"; }
inline TokenInit parse_init(std::string_view s) {
  if (s == "gaussian") return TokenInit::gaussian;
  if (s == "clustered") return TokenInit::clustered;
  throw ConfigError("unknown token init '" + std::string(s) + "'");
}

struct PipelineConfig {
  GridShape grid{8, 16, 16};
  Index d = 64;
  Index blocks = 8;
  Index heads = 1;
  Index timesteps = 30;
  std::uint64_t seed = 0;
  RnrMode mode = RnrMode::none;
  std::optional<ScheduleConfig> schedule;
  std::shared_ptr<const SimilarityProfile> profile;
  bool profiling = false;
  bool rope = true;
  bool scale = true;
  Precision precision = Precision::f64;
  ReductionOp reduce_op = ReductionOp::discard;
  TokenInit init = TokenInit::gaussian;
  Index clusters = 16;
  double cluster_noise = 0.05;
  double duplicate_fraction = 0.0;
  double gamma = 0.1;
  /// Match queries after RoPE (the tensor attention sees) or before.
  bool match_q_post_rope = true;
  /// Draw new destinations whenever a match is recomputed instead of once per block.
  bool redraw_partitions = false;
  /// Record row-norm percentiles of H and V per step and block.
  bool norm_stats = false;
  /// k for per-block KL scoring of applied plans; 0 disables it.
  Index kl_k = 0;

  /// Throws ConfigError. Returns schedule warnings.
  std::vector<std::string> validate() const {
    try {
      grid.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (d < 1 || blocks < 1 || heads < 1 || timesteps < 1) throw ConfigError("config: counts must be >= 1");
    if (d % heads != 0) throw ConfigError("config: d=" + std::to_string(d) + " not divisible by heads");
    if (grid.size() < 2) throw ConfigError("config: grid needs at least two tokens");
    if (!(duplicate_fraction >= 0.0 && duplicate_fraction < 1.0))
      throw ConfigError("config: duplicate_fraction outside [0,1)");
    if (init == TokenInit::clustered && clusters < 1) throw ConfigError("config: clusters must be >= 1");
    if (rope) {
      try {
        rope_axis_split(d / heads);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    std::vector<std::string> warnings;
    if (schedule) {
      try {
        warnings = schedule->validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const bool reduces = mode != RnrMode::none && !schedule->is_noop();
      if (reduces && destination_count(grid, schedule->stride) == 0)
        throw ConfigError("config: stride leaves no complete chunk, so there are no destinations");
      const std::vector<Feature> used =
          mode == RnrMode::sym ? std::vector<Feature>{Feature::H} : std::vector<Feature>{Feature::Q, Feature::V};
      for (Feature f : used) {
        if (mode == RnrMode::none || !schedule->needs_profile(f)) continue;
        if (!profile) throw ConfigError("config: schedule thresholds need a similarity profile");
        const auto& m = profile->metadata();
        if (m.num_timesteps != timesteps || m.num_blocks != blocks)
          throw ConfigError("config: profile lattice " + std::to_string(m.num_timesteps) + "x" +
                            std::to_string(m.num_blocks) + " does not match run " + std::to_string(timesteps) +
                            "x" + std::to_string(blocks));
        if (!profile->contains(f, 0, 0))
          throw ConfigError("config: profile lacks feature " + std::string(to_string(f)));
      }
    }
    return warnings;
  }
};

struct BlockRecord {
  Index t = 0;
  Index b = 0;
  double rate_q = 0.0;   ///< applied to Q (asym) or H (sym)
  double rate_kv = 0.0;  ///< applied to K and V (asym only)
  Index m_q = 0;
  Index m_kv = 0;
  std::uint64_t matching_runs = 0;
  CostBreakdown measured;
  CostBreakdown predicted;
  double wall_ms = 0.0;
  double kl_q = std::numeric_limits<double>::quiet_NaN();
  double kl_kv = std::numeric_limits<double>::quiet_NaN();
};

struct NormRecord {
  Feature feature = Feature::H;
  Index t = 0;
  Index b = 0;
  double p5 = 0, p50 = 0, p95 = 0, p99 = 0;
};

struct RunReport {
  PipelineConfig config;
  std::vector<BlockRecord> blocks;
  CostBreakdown measured;
  CostBreakdown predicted;
  std::uint64_t checksum = 0;
  double total_ms = 0.0;
  std::uint64_t bsm_invocations = 0;
  /// Matching work done only for profiling; not part of `measured`.
  std::uint64_t profiling_matching_macs = 0;
  Matrix<double> final_tokens;
  std::optional<SimilarityProfile> profile;
  std::vector<NormRecord> norms;
  std::vector<std::string> warnings;

  double flops() const noexcept { return measured.flops(); }
};

/// Overwrites round(fraction * n) distinct tokens with copies of tokens
/// outside that set, so each overwritten token has an exact duplicate.
template <class T>
TokenGrid<T> inject_duplicates(TokenGrid<T> grid, double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw std::invalid_argument("inject_duplicates: fraction outside [0,1)");
  const Index n = grid.tokens.rows();
  const auto count = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
  if (count == 0) return grid;
  if (count >= n) throw std::invalid_argument("inject_duplicates: nothing left to copy from");
  std::vector<Index> perm(n);
  for (Index i = 0; i < n; ++i) perm[i] = i;
  for (Index i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  const Index n_src = n - count;
  for (Index i = 0; i < count; ++i) {
    const Index from = perm[count + rng.index(n_src)];
    auto src = grid.tokens.row(from);
    std::copy(src.begin(), src.end(), grid.tokens.row(perm[i]).begin());
  }
  return grid;
}

template <class T>
Matrix<T> rms_normalize(const Matrix<T>& x, double eps = 1e-6) {
  Matrix<T> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double ss = 0.0;
    for (T v : r) ss = std::fma(static_cast<double>(v), static_cast<double>(v), ss);
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(r.size()) + eps);
    auto o = y.row(i);
    for (Index c = 0; c < r.size(); ++c) o[c] = static_cast<T>(static_cast<double>(r[c]) * inv);
  }
  return y;
}

/// p5/p50/p95/p99 of the Euclidean row norms.
template <class T>
NormRecord row_norm_percentiles(const Matrix<T>& x) {
  std::vector<double> norms(x.rows());
  for (Index i = 0; i < x.rows(); ++i) norms[i] = static_cast<double>(l2_norm(x.row(i)));
  std::sort(norms.begin(), norms.end());
  NormRecord r;
  r.p5 = percentile_sorted(norms, 0.05);
  r.p50 = percentile_sorted(norms, 0.50);
  r.p95 = percentile_sorted(norms, 0.95);
  r.p99 = percentile_sorted(norms, 0.99);
  return r;
}

/// Initial tokens for a config, including duplicate injection.
template <class T>
Matrix<T> initial_tokens(const PipelineConfig& cfg) {
  Rng rng = Rng(cfg.seed).derive(1);
  const Index n = cfg.grid.size();
  Matrix<T> x(n, cfg.d);
  if (cfg.init == TokenInit::gaussian) {
    x = random_normal<T>(n, cfg.d, rng);
  } else {
    const Matrix<double> centers = random_normal<double>(cfg.clusters, cfg.d, rng);
    for (Index i = 0; i < n; ++i) {
      const Index c = rng.index(cfg.clusters);
      for (Index j = 0; j < cfg.d; ++j) x(i, j) = static_cast<T>(centers(c, j) + cfg.cluster_noise * rng.normal());
    }
  }
  if (cfg.duplicate_fraction > 0.0) {
    Rng dup = Rng(cfg.seed).derive(2);
    x = inject_duplicates(TokenGrid<T>(cfg.grid, std::move(x)), cfg.duplicate_fraction, dup).tokens;
  }
  return x;
}

namespace detail {

struct ProfileAccumulator {
  std::vector<ProfileRecord> records;
  std::uint64_t macs = 0;

  template <class T>
  void add(Feature f, Index t, Index b, const Matrix<T>& tokens, const Partition& part, SimilarityMetric metric,
           Rng& rng) {
    CostBreakdown c;
    const MatchResult m = pairwise_best_match(tokens, part, metric, rng, &c);
    macs += c.matching;
    ProfileRecord r;
    r.feature = f;
    r.t = t;
    r.b = b;
    if (!m.best_sim.empty()) {
      double s = 0.0;
      for (double v : m.best_sim) s += v;
      r.sim_raw = s / static_cast<double>(m.best_sim.size());
      std::vector<double> sorted = m.best_sim;
      std::sort(sorted.begin(), sorted.end());
      r.p10 = percentile_sorted(sorted, 0.10);
      r.p90 = percentile_sorted(sorted, 0.90);
    }
    records.push_back(r);
  }
};

template <class T>
RunReport run_pipeline_impl(const PipelineConfig& cfg) {
  using clock = std::chrono::steady_clock;
  RunReport rep;
  rep.config = cfg;
  rep.warnings = cfg.validate();
  const auto t_start = clock::now();

  const Index n = cfg.grid.size(), d = cfg.d;
  const ScheduleConfig sched = cfg.schedule.value_or(ScheduleConfig{});
  const bool reducing = cfg.mode != RnrMode::none && cfg.schedule && !sched.is_noop();
  const AttentionOptions aopt{cfg.heads, cfg.scale};
  const Rng root(cfg.seed);

  std::vector<ProjectionWeights<T>> weights;
  const double wstd = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index b = 0; b < cfg.blocks; ++b) {
    Rng wr = root.derive(1000 + b);
    weights.push_back({random_normal<double>(d, d, wr, wstd).template cast<T>(),
                       random_normal<double>(d, d, wr, wstd).template cast<T>(),
                       random_normal<double>(d, d, wr, wstd).template cast<T>()});
  }
  std::optional<Rope3d> rope;
  if (cfg.rope) rope.emplace(cfg.grid, d, RopeOptions{10000.0, cfg.heads});

  const bool need_parts = reducing || cfg.profiling;
  std::vector<Partition> parts(cfg.blocks);
  if (need_parts) {
    if (destination_count(cfg.grid, sched.stride) == 0)
      throw ConfigError("config: stride leaves no complete chunk, so there are no destinations");
    for (Index b = 0; b < cfg.blocks; ++b) {
      Rng pr = root.derive(2000 + b);
      parts[b] = partition_3d(cfg.grid, sched.stride, pr);
    }
  }
  const double r_d = need_parts ? destination_ratio(cfg.grid, sched.stride) : 0.0;
  Rng match_rng = root.derive(3000);
  Rng profile_rng = root.derive(4000);
  MatchingCache cache(sched.cache_step);
  ProfileAccumulator prof;

  Matrix<T> x = initial_tokens<T>(cfg);

  for (Index t = 0; t < cfg.timesteps; ++t) {
    Matrix<T> h = x;
    for (Index b = 0; b < cfg.blocks; ++b) {
      const auto t0 = clock::now();
      BlockRecord rec;
      rec.t = t;
      rec.b = b;
      const Matrix<T> hn = rms_normalize(h);
      const auto& w = weights[b];
      CostBreakdown cost;

      auto partition_for = [&](Feature f) -> Partition {
        if (cfg.redraw_partitions && cache.needs_recompute(f, b, t)) {
          Rng pr = root.derive(Rng::mix(5000 + t * cfg.blocks + b) ^ static_cast<std::uint64_t>(f));
          return partition_3d(cfg.grid, sched.stride, pr);
        }
        return parts[b];
      };
      auto match_plan = [&](Feature f, const Matrix<T>& tokens, double rate) {
        const Partition part = partition_for(f);
        const auto& e = cache.cached_match(f, b, t, tokens, part, sched.metric, match_rng, &cost);
        if (!cache.last_was_hit()) ++rec.matching_runs;
        return build_plan(e.match, e.part, rate);
      };

      if (cfg.profiling) {
        // Separate uncounted projections so profiling never changes the costs.
        Matrix<T> q = matmul(hn, w.wq), k = matmul(hn, w.wk), v = matmul(hn, w.wv);
        if (rope) {
          if (cfg.match_q_post_rope) q = rope->apply(std::move(q));
          k = rope->apply(std::move(k));
        }
        prof.add(Feature::H, t, b, hn, parts[b], sched.metric, profile_rng);
        prof.add(Feature::Q, t, b, q, parts[b], sched.metric, profile_rng);
        prof.add(Feature::K, t, b, k, parts[b], sched.metric, profile_rng);
        prof.add(Feature::V, t, b, v, parts[b], sched.metric, profile_rng);
      }

      Matrix<T> attn_out;
      std::optional<Matrix<T>> v_full;
      if (cfg.mode == RnrMode::sym && reducing) {
        rec.rate_q = lookup_rate(sched, cfg.profile.get(), Feature::H, t, b);
        if (rec.rate_q > 0.0) {
          const ReductionPlan plan = match_plan(Feature::H, hn, rec.rate_q);
          rec.m_q = rec.m_kv = plan.reduced_len();
          attn_out = attn_sym_rnr(hn, w, plan, cfg.reduce_op, aopt, rope ? &*rope : nullptr, &cost);
          if (cfg.kl_k > 0 && !plan.is_identity()) rec.kl_q = score_reduction(hn, plan, cfg.kl_k);
        }
      }
      if (attn_out.empty()) {
        Matrix<T> q = project(hn, w.wq, &cost);
        Matrix<T> k = project(hn, w.wk, &cost);
        Matrix<T> v = project(hn, w.wv, &cost);
        std::optional<Matrix<T>> q_pre;
        if (rope) {
          if (!cfg.match_q_post_rope) q_pre = q;
          q = rope->apply(std::move(q));
          k = rope->apply(std::move(k));
        }
        ReductionPlan plan_q = ReductionPlan::identity(n), plan_kv = ReductionPlan::identity(n);
        if (cfg.mode == RnrMode::asym && reducing) {
          rec.rate_q = lookup_rate(sched, cfg.profile.get(), Feature::Q, t, b);
          rec.rate_kv = lookup_rate(sched, cfg.profile.get(), Feature::V, t, b);
          if (rec.rate_q > 0.0) plan_q = match_plan(Feature::Q, q_pre ? *q_pre : q, rec.rate_q);
          if (rec.rate_kv > 0.0) plan_kv = match_plan(Feature::V, v, rec.rate_kv);
          if (cfg.kl_k > 0) {
            if (!plan_q.is_identity()) rec.kl_q = score_reduction(q, plan_q, cfg.kl_k);
            if (!plan_kv.is_identity()) rec.kl_kv = score_reduction(v, plan_kv, cfg.kl_k);
          }
        }
        rec.m_q = plan_q.reduced_len();
        rec.m_kv = plan_kv.reduced_len();
        attn_out = attn_asym_rnr(q, k, v, plan_q, plan_kv, cfg.reduce_op, aopt, &cost);
        if (cfg.norm_stats) v_full = std::move(v);
      }
      if (cfg.norm_stats) {
        NormRecord nh = row_norm_percentiles(h);
        nh.feature = Feature::H;
        nh.t = t;
        nh.b = b;
        rep.norms.push_back(nh);
        NormRecord nv = row_norm_percentiles(v_full ? *v_full : project(hn, w.wv, nullptr));
        nv.feature = Feature::V;
        nv.t = t;
        nv.b = b;
        rep.norms.push_back(nv);
      }
      if (attn_out.rows() != n) throw InvariantError("block output lost rows");
      for (Index i = 0; i < h.data().size(); ++i) h.data()[i] += attn_out.data()[i];

      rec.measured = cost;
      rec.predicted = cfg.mode == RnrMode::sym && rec.rate_q > 0.0
                          ? cost_sym(n, d, rec.m_q, rec.matching_runs, r_d, cfg.heads)
                          : cost_asym(n, d, rec.m_q, rec.m_kv, rec.matching_runs, r_d, cfg.heads);
      if (!(rec.measured == rec.predicted))
        throw InvariantError("cost counter disagrees with model at t=" + std::to_string(t) +
                             " b=" + std::to_string(b));
      rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      rep.measured += rec.measured;
      rep.predicted += rec.predicted;
      rep.blocks.push_back(rec);
    }
    const T g = static_cast<T>(cfg.gamma);
    for (Index i = 0; i < x.data().size(); ++i) x.data()[i] -= g * h.data()[i];
    if (!x.all_finite()) throw InvariantError("tokens became non-finite at step " + std::to_string(t));
  }

  rep.total_ms = std::chrono::duration<double, std::milli>(clock::now() - t_start).count();
  rep.checksum = checksum(x);
  rep.final_tokens = x.template cast<double>();
  rep.bsm_invocations = cache.total_invocations();
  if (cfg.profiling) {
    ProfileMetadata meta;
    meta.grid = cfg.grid;
    meta.stride = sched.stride;
    meta.metric = sched.metric;
    meta.num_timesteps = cfg.timesteps;
    meta.num_blocks = cfg.blocks;
    meta.seed = cfg.seed;
    rep.profiling_matching_macs = prof.macs;
    rep.profile = SimilarityProfile::from_raw(meta, std::move(prof.records));
  }
  return rep;
}

}  // namespace detail

/// Runs the whole sampling loop. Deterministic in (cfg, seed) except for
/// the wall-time fields.
inline RunReport run_pipeline(const PipelineConfig& cfg) {
  return cfg.precision == Precision::f32 ? detail::run_pipeline_impl<float>(cfg)
                                         : detail::run_pipeline_impl<double>(cfg);
}

/// Runs with profiling on and returns the recorded profile.
inline SimilarityProfile record_profile(PipelineConfig cfg) {
  cfg.profiling = true;
  RunReport r = run_pipeline(cfg);
  if (!r.profile) throw std::logic_error("record_profile: run produced no profile");
  return std::move(*r.profile);
}

}  // namespace rnr
