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

// Command implementations behind the rnr_bench tool. They take parsed
// options, write their artifacts, and return the rows they produced so
// tests can inspect results without going through a process boundary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rnr/io.hpp"
#include "rnr/klnn.hpp"
#include "rnr/toydit.hpp"

namespace rnr {

/// Worker cap from RNR_THREADS; unset or 0 means hardware concurrency.
inline unsigned worker_count() {
  unsigned n = 0;
  if (const char* env = std::getenv("RNR_THREADS")) n = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Runs fn(i) for i in [0, count) on up to worker_count() threads. The first
/// exception (lowest index) is rethrown after all workers finish.
template <class F>
void parallel_for(Index count, F&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<Index>(worker_count(), count));
  if (workers <= 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::mutex mu;
  Index next = 0;
  auto work = [&] {
    for (;;) {
      Index i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= count) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Largest Euclidean norm of a row difference.
inline double max_row_deviation(const Matrix<double>& a, const Matrix<double>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvariantError("deviation: shape mismatch");
  double m = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < a.cols(); ++j) {
      const double diff = a(i, j) - b(i, j);
      s += diff * diff;
    }
    m = std::max(m, std::sqrt(s));
  }
  return m;
}

struct Timing {
  double median_ms = 0, min_ms = 0, max_ms = 0;
};

/// One warm-up run, then `repeat` timed runs. Returns the last report.
inline RunReport timed_run(const PipelineConfig& cfg, Index repeat, Timing& timing) {
  RunReport rep = run_pipeline(cfg);
  std::vector<double> ms;
  for (Index i = 0; i < std::max<Index>(repeat, 1); ++i) {
    RunReport r = run_pipeline(cfg);
    if (r.checksum != rep.checksum) throw InvariantError("repeated run changed the output checksum");
    ms.push_back(r.total_ms);
    rep = std::move(r);
  }
  std::sort(ms.begin(), ms.end());
  timing.min_ms = ms.front();
  timing.max_ms = ms.back();
  timing.median_ms = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  return rep;
}

// ---------------------------------------------------------------------------
// profile

inline SimilarityProfile cmd_profile(const PipelineConfig& cfg, const std::string& out_path) {
  SimilarityProfile p = record_profile(cfg);
  if (!out_path.empty()) write_text_file(out_path, profile_to_json(p).dump(2) + "\n");
  return p;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  std::string config_id;
  RnrMode mode = RnrMode::none;
  std::uint64_t schedule_hash = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t predicted_macs = 0;
  double wall_ms = 0, wall_min_ms = 0, wall_max_ms = 0;
  double speedup = 1.0;
  std::uint64_t checksum = 0;
  double max_row_deviation = 0.0;
  std::uint64_t bsm_invocations = 0;
};

inline const std::vector<std::string>& bench_header() {
  static const std::vector<std::string> h{"schema_version", "config_id",      "mode",          "schedule_hash",
                                          "total_macs",     "predicted_macs", "flops",         "wall_ms",
                                          "wall_min_ms",    "wall_max_ms",    "speedup",       "checksum",
                                          "max_row_deviation", "bsm_invocations"};
  return h;
}

inline std::vector<std::string> bench_fields(const BenchRow& r) {
  return {std::to_string(kSchemaVersion),
          r.config_id,
          std::string(to_string(r.mode)),
          hex64(r.schedule_hash),
          std::to_string(r.total_macs),
          std::to_string(r.predicted_macs),
          format_double(2.0 * static_cast<double>(r.total_macs)),
          format_double(r.wall_ms),
          format_double(r.wall_min_ms),
          format_double(r.wall_max_ms),
          format_double(r.speedup),
          hex64(r.checksum),
          format_double(r.max_row_deviation),
          std::to_string(r.bsm_invocations)};
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  CsvWriter w(out, bench_header());
  for (const auto& r : rows) w.row(bench_fields(r));
}

/// Baseline (mode none) against the configured mode with `schedule`, same
/// seed. An absent schedule leaves the variant identical to the baseline.
inline std::vector<BenchRow> cmd_bench(PipelineConfig cfg, const std::optional<ScheduleConfig>& schedule,
                                       Index repeat, const std::string& out_csv, const std::string& config_id = "") {
  if (schedule) cfg.schedule = schedule;
  if (cfg.mode == RnrMode::none) cfg.mode = RnrMode::asym;
  cfg.validate();
  PipelineConfig base = cfg;
  base.mode = RnrMode::none;
  Timing tb, tv;
  const RunReport rb = timed_run(base, repeat, tb);
  const RunReport rv = timed_run(cfg, repeat, tv);
  auto make = [&](const RunReport& r, const Timing& t, const std::string& suffix) {
    BenchRow row;
    row.config_id = (config_id.empty() ? std::string("run") : config_id) + suffix;
    row.mode = r.config.mode;
    row.schedule_hash = schedule_hash(r.config.mode == RnrMode::none ? std::nullopt : r.config.schedule);
    row.total_macs = r.measured.total();
    row.predicted_macs = r.predicted.total();
    row.wall_ms = t.median_ms;
    row.wall_min_ms = t.min_ms;
    row.wall_max_ms = t.max_ms;
    row.speedup = tb.median_ms / t.median_ms;
    row.checksum = r.checksum;
    row.max_row_deviation = max_row_deviation(r.final_tokens, rb.final_tokens);
    row.bsm_invocations = r.bsm_invocations;
    return row;
  };
  std::vector<BenchRow> rows{make(rb, tb, "/baseline"), make(rv, tv, "/" + std::string(to_string(cfg.mode)))};
  if (!out_csv.empty()) {
    std::ostringstream os;
    write_bench_csv(os, rows);
    write_text_file(out_csv, os.str());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string dimension;
  std::string value;
  double dst_ratio = 0.0;
  std::uint64_t total_macs = 0;
  double wall_ms = 0.0;
  double kl = 0.0;  ///< mean per-block KL estimate over blocks that reduced
  /// KL at step 0, block 0, the only block whose input tokens are the same
  /// for every sweep point; NaN when that block did not reduce.
  double kl_first = std::numeric_limits<double>::quiet_NaN();
  double max_row_deviation = 0.0;
  std::uint64_t bsm_invocations = 0;
  /// Matching passes for one (feature, block) pair.
  std::uint64_t bsm_per_feature_block = 0;
};

/// Strides whose destination ratios on a 13x30x45 grid are tabulated.
inline const std::vector<Stride>& ablation_strides() {
  static const std::vector<Stride> s{{1, 2, 2}, {2, 2, 2}, {3, 2, 2}, {4, 2, 2}, {2, 3, 3}, {2, 4, 4}};
  return s;
}

inline std::string stride_label(const Stride& s) {
  return std::to_string(s.t) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

/// Sweeps one dimension with everything else held at `cfg`. Without a
/// schedule in cfg, a uniform Q 0.5 / V 0.5 schedule is used.
inline std::vector<AblationRow> cmd_ablate(const std::string& dimension, PipelineConfig cfg,
                                           const std::string& out_csv) {
  if (!cfg.schedule) cfg.schedule = ScheduleConfig::uniform(0.5, 0.5);
  if (cfg.mode == RnrMode::none) cfg.mode = RnrMode::asym;
  if (cfg.kl_k == 0) cfg.kl_k = 1;
  std::vector<std::pair<std::string, PipelineConfig>> points;
  auto add = [&](std::string label, auto&& mutate) {
    PipelineConfig c = cfg;
    mutate(c);
    points.emplace_back(std::move(label), std::move(c));
  };
  if (dimension == "metric") {
    for (auto m : {SimilarityMetric::neg_euclidean, SimilarityMetric::cosine, SimilarityMetric::dot,
                   SimilarityMetric::random})
      add(std::string(to_string(m)), [&](PipelineConfig& c) { c.schedule->metric = m; });
  } else if (dimension == "reduce_op") {
    for (auto op : {ReductionOp::discard, ReductionOp::mean})
      add(std::string(to_string(op)), [&](PipelineConfig& c) { c.reduce_op = op; });
  } else if (dimension == "cache_step") {
    for (Index s = 1; s <= 6; ++s) add(std::to_string(s), [&](PipelineConfig& c) { c.schedule->cache_step = s; });
  } else if (dimension == "stride") {
    for (const Stride& s : ablation_strides())
      add(stride_label(s), [&](PipelineConfig& c) { c.schedule->stride = s; });
  } else if (dimension == "feature") {
    const ScheduleConfig sc = *cfg.schedule;
    auto only = [&](Feature keep) {
      return [&, keep](PipelineConfig& c) {
        ScheduleConfig s = sc;
        for (auto it = s.maps.begin(); it != s.maps.end();)
          it = it->first == keep ? std::next(it) : s.maps.erase(it);
        c.schedule = s;
        c.mode = RnrMode::asym;
      };
    };
    add("Q", only(Feature::Q));
    add("KV", only(Feature::V));
    add("QKV", [&](PipelineConfig& c) { c.mode = RnrMode::asym; });
    add("H", [&](PipelineConfig& c) { c.mode = RnrMode::sym; });
  } else {
    throw ConfigError("ablate: unknown dimension '" + dimension +
                      "' (expected metric, reduce_op, cache_step, stride or feature)");
  }
  PipelineConfig base = cfg;
  base.mode = RnrMode::none;
  base.kl_k = 0;
  const RunReport rb = run_pipeline(base);

  std::vector<AblationRow> rows(points.size());
  parallel_for(points.size(), [&](Index i) {
    const auto& [label, c] = points[i];
    const RunReport r = run_pipeline(c);
    AblationRow row;
    row.dimension = dimension;
    row.value = label;
    row.dst_ratio = destination_ratio(c.grid, c.schedule->stride);
    row.total_macs = r.measured.total();
    row.wall_ms = r.total_ms;
    double kl_sum = 0.0;
    Index kl_n = 0;
    for (const auto& b : r.blocks) {
      for (double v : {b.kl_q, b.kl_kv})
        if (!std::isnan(v)) {
          kl_sum += v;
          ++kl_n;
        }
    }
    row.kl = kl_n ? kl_sum / static_cast<double>(kl_n) : 0.0;
    {
      const auto& b0 = r.blocks.front();
      double s = 0.0;
      Index c = 0;
      for (double v : {b0.kl_q, b0.kl_kv})
        if (!std::isnan(v)) {
          s += v;
          ++c;
        }
      if (c) row.kl_first = s / static_cast<double>(c);
    }
    row.max_row_deviation = max_row_deviation(r.final_tokens, rb.final_tokens);
    row.bsm_invocations = r.bsm_invocations;
    // Scheduled features recompute together, so steps with any pass in
    // block 0 equal the per-(feature, block) count.
    std::uint64_t per = 0;
    for (const auto& b : r.blocks)
      if (b.b == 0 && b.matching_runs > 0) ++per;
    row.bsm_per_feature_block = per;
    rows[i] = row;
  });
  if (!out_csv.empty()) {
    std::ostringstream os;
    CsvWriter w(os, {"schema_version", "dimension", "value", "dst_ratio", "total_macs", "wall_ms", "kl",
                     "kl_first", "max_row_deviation", "bsm_invocations", "bsm_per_feature_block"});
    for (const auto& r : rows)
      w.row({std::to_string(kSchemaVersion), r.dimension, r.value, format_double(r.dst_ratio),
             std::to_string(r.total_macs), format_double(r.wall_ms), format_double(r.kl),
             std::isnan(r.kl_first) ? std::string() : format_double(r.kl_first), format_double(r.max_row_deviation), std::to_string(r.bsm_invocations),
             std::to_string(r.bsm_per_feature_block)});
    write_text_file(out_csv, os.str());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// klcheck

struct KlCheckRow {
  std::string case_name;
  Index d = 0;
  Index l = 0;
  Index seeds = 0;
  double closed_form = 0.0;
  double mean_estimate = 0.0;
  double mean_abs_error = 0.0;  ///< mean over seeds of |estimate - closed form|
};

/// Gaussian pairs with known divergence D(P' || P), P = N(0, I):
///   shift:  P' = N((1, 0, ..., 0), I)          D = 1/2
///   scale:  P' = N(0, diag(s_i^2)), s_i^2 cycling 0.5, 1, 1.5, 2
///   same:   P' = P                              D = 0
inline std::vector<KlCheckRow> cmd_klcheck(Index d, const std::vector<Index>& sizes, Index seeds, Index k,
                                           std::uint64_t seed, const std::string& out_csv) {
  if (d < 1 || seeds < 1 || k < 1) throw ConfigError("klcheck: d, seeds and k must be >= 1");
  std::vector<double> var(d);
  for (Index i = 0; i < d; ++i) var[i] = 0.5 * static_cast<double>(1 + i % 4);
  struct Case {
    const char* name;
    double kl;
  };
  double scale_kl = 0.0;
  for (double v : var) scale_kl += 0.5 * (v - 1.0 - std::log(v));
  const Case cases[] = {{"shift", 0.5}, {"scale", scale_kl}, {"same", 0.0}};
  std::vector<KlCheckRow> rows;
  for (Index ci = 0; ci < 3; ++ci) {
    for (Index l : sizes) {
      if (l < k + 1) throw ConfigError("klcheck: sample size must exceed k");
      KlCheckRow row{cases[ci].name, d, l, seeds, cases[ci].kl, 0.0, 0.0};
      std::vector<double> est(seeds);
      parallel_for(seeds, [&](Index s) {
        Rng rng = Rng(seed).derive(Rng::mix(ci * 1000003 + l) ^ s);
        Matrix<double> x = random_normal<double>(l, d, rng);
        Matrix<double> xp = random_normal<double>(l, d, rng);
        for (Index i = 0; i < l; ++i) {
          if (ci == 0) xp(i, 0) += 1.0;
          if (ci == 1)
            for (Index j = 0; j < d; ++j) xp(i, j) *= std::sqrt(var[j]);
        }
        est[s] = kl_estimate(SampleSet(std::move(xp)), SampleSet(std::move(x)), k).value;
      });
      for (double e : est) {
        row.mean_estimate += e / static_cast<double>(seeds);
        row.mean_abs_error += std::abs(e - row.closed_form) / static_cast<double>(seeds);
      }
      rows.push_back(row);
    }
  }
  if (!out_csv.empty()) {
    std::ostringstream os;
    CsvWriter w(os, {"schema_version", "case", "d", "l", "seeds", "closed_form", "mean_estimate", "mean_abs_error"});
    for (const auto& r : rows)
      w.row({std::to_string(kSchemaVersion), r.case_name, std::to_string(r.d), std::to_string(r.l),
             std::to_string(r.seeds), format_double(r.closed_form), format_double(r.mean_estimate),
             format_double(r.mean_abs_error)});
    write_text_file(out_csv, os.str());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// normstats

/// Row-norm percentiles of H and V per (feature, t, b). `steps` restricts
/// output to the listed sampling steps; empty means all.
inline std::vector<NormRecord> cmd_normstats(PipelineConfig cfg, const std::vector<Index>& steps,
                                             const std::string& out_csv) {
  cfg.norm_stats = true;
  for (Index s : steps)
    if (s >= cfg.timesteps) throw ConfigError("normstats: step " + std::to_string(s) + " out of range");
  const RunReport r = run_pipeline(cfg);
  std::vector<NormRecord> rows;
  for (const auto& n : r.norms)
    if (steps.empty() || std::find(steps.begin(), steps.end(), n.t) != steps.end()) rows.push_back(n);
  if (!out_csv.empty()) {
    std::ostringstream os;
    CsvWriter w(os, {"schema_version", "feature", "t", "b", "p5", "p50", "p95", "p99"});
    for (const auto& n : rows)
      w.row({std::to_string(kSchemaVersion), std::string(to_string(n.feature)), std::to_string(n.t),
             std::to_string(n.b), format_double(n.p5), format_double(n.p50), format_double(n.p95),
             format_double(n.p99)});
    write_text_file(out_csv, os.str());
  }
  return rows;
}

}  // namespace rnr
