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

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "rnr/matching.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

/// Attention features whose redundancy is profiled. H is the block input.
enum class Feature { H, Q, K, V };

inline constexpr std::array<Feature, 4> kAllFeatures{Feature::H, Feature::Q, Feature::K, Feature::V};

inline std::string_view to_string(Feature f) {
  switch (f) {
    case Feature::H: return "H";
    case Feature::Q: return "Q";
    case Feature::K: return "K";
    case Feature::V: return "V";
  }
  return "?";
}

inline Feature parse_feature(std::string_view s) {
  if (s == "H") return Feature::H;
  if (s == "Q") return Feature::Q;
  if (s == "K") return Feature::K;
  if (s == "V") return Feature::V;
  throw std::invalid_argument("unknown feature '" + std::string(s) + "'");
}

/// Which schedule map governs a feature. K follows V's entry; H, reduced
/// only in symmetric mode, follows Q's.
inline Feature schedule_key(Feature f) {
  switch (f) {
    case Feature::K:
    case Feature::V: return Feature::V;
    case Feature::H:
    case Feature::Q: return Feature::Q;
  }
  return Feature::Q;
}

// ---------------------------------------------------------------------------
// Similarity profile

struct ProfileRecord {
  Feature feature = Feature::H;
  Index t = 0;
  Index b = 0;
  double sim_raw = 0.0;  ///< mean best-match similarity over sources
  double sim_std = 0.0;  ///< standardized within the feature, in [0, 1]
  double p10 = 0.0;      ///< 10th percentile of best-match similarity
  double p90 = 0.0;      ///< 90th percentile
};

struct ProfileMetadata {
  GridShape grid;
  Stride stride;
  SimilarityMetric metric = SimilarityMetric::neg_euclidean;
  Index num_timesteps = 0;
  Index num_blocks = 0;
  std::vector<Feature> features{kAllFeatures.begin(), kAllFeatures.end()};
  std::uint64_t seed = 0;
};

/// Standardized similarity per (feature, t, b), complete over the lattice
/// declared by its metadata.
class SimilarityProfile {
 public:
  SimilarityProfile() = default;

  /// Builds a profile from raw records, standardizing each feature across all
  /// of its (t, b) points. A feature with a single point gets 0.5.
  static SimilarityProfile from_raw(ProfileMetadata meta, std::vector<ProfileRecord> records) {
    if (records.empty()) throw std::invalid_argument("similarity profile: no records");
    for (Feature f : meta.features) {
      std::vector<Index> idx;
      std::vector<double> raw;
      for (Index i = 0; i < records.size(); ++i)
        if (records[i].feature == f) {
          idx.push_back(i);
          raw.push_back(records[i].sim_raw);
        }
      if (raw.size() == 1) {
        records[idx[0]].sim_std = 0.5;
      } else if (!raw.empty()) {
        const auto s = standardize_profile(raw);
        for (Index j = 0; j < idx.size(); ++j) records[idx[j]].sim_std = s[j];
      }
    }
    SimilarityProfile p;
    p.meta_ = std::move(meta);
    p.records_ = std::move(records);
    p.reindex();
    p.validate();
    return p;
  }

  /// Takes records as-is (sim_std already set), e.g. when loading a file.
  static SimilarityProfile from_records(ProfileMetadata meta, std::vector<ProfileRecord> records) {
    SimilarityProfile p;
    p.meta_ = std::move(meta);
    p.records_ = std::move(records);
    p.reindex();
    p.validate();
    return p;
  }

  const ProfileMetadata& metadata() const noexcept { return meta_; }
  const std::vector<ProfileRecord>& records() const noexcept { return records_; }
  Index size() const noexcept { return records_.size(); }

  bool contains(Feature f, Index t, Index b) const { return index_.count(key(f, t, b)) != 0; }

  const ProfileRecord& record(Feature f, Index t, Index b) const {
    auto it = index_.find(key(f, t, b));
    if (it == index_.end())
      throw std::out_of_range("similarity profile has no entry for (" + std::string(to_string(f)) + ", t=" +
                              std::to_string(t) + ", b=" + std::to_string(b) + ")");
    return records_[it->second];
  }

  double value(Feature f, Index t, Index b) const { return record(f, t, b).sim_std; }

  /// Throws unless every declared lattice point is present exactly once and
  /// every standardized value is in [0, 1].
  void validate() const {
    const Index want = meta_.features.size() * meta_.num_timesteps * meta_.num_blocks;
    if (index_.size() != records_.size()) throw std::invalid_argument("similarity profile: duplicate lattice point");
    if (records_.size() != want)
      throw std::invalid_argument("similarity profile: " + std::to_string(records_.size()) +
                                  " records, lattice needs " + std::to_string(want));
    for (const auto& r : records_) {
      if (r.t >= meta_.num_timesteps || r.b >= meta_.num_blocks)
        throw std::invalid_argument("similarity profile: record outside declared lattice");
      if (!(r.sim_std >= 0.0 && r.sim_std <= 1.0))
        throw std::invalid_argument("similarity profile: standardized value outside [0,1]");
    }
    for (Feature f : meta_.features)
      for (Index t = 0; t < meta_.num_timesteps; ++t)
        for (Index b = 0; b < meta_.num_blocks; ++b)
          if (!contains(f, t, b)) throw std::invalid_argument("similarity profile: lattice incomplete");
  }

 private:
  using Key = std::tuple<int, Index, Index>;
  static Key key(Feature f, Index t, Index b) { return {static_cast<int>(f), t, b}; }

  void reindex() {
    index_.clear();
    for (Index i = 0; i < records_.size(); ++i)
      index_.emplace(key(records_[i].feature, records_[i].t, records_[i].b), i);
  }

  ProfileMetadata meta_;
  std::vector<ProfileRecord> records_;
  std::map<Key, Index> index_;
};

// ---------------------------------------------------------------------------
// Schedule

/// threshold -> rate, ordered by threshold.
using RateMap = std::map<double, double>;

/// Rate of the largest threshold <= s_hat, or 0 below every threshold.
inline double lookup_rate(const RateMap& map, double s_hat) {
  auto it = map.upper_bound(s_hat);
  if (it == map.begin()) return 0.0;
  return std::prev(it)->second;
}

struct ScheduleConfig {
  /// Only Q and V entries are meaningful; V also governs K.
  std::map<Feature, RateMap> maps;
  Index cache_step = 5;
  Stride stride;
  SimilarityMetric metric = SimilarityMetric::neg_euclidean;

  /// Every steady-state rate is 0: the schedule never reduces anything.
  bool is_noop() const {
    for (const auto& [f, m] : maps)
      for (const auto& [th, r] : m)
        if (r > 0.0) return false;
    return true;
  }

  const RateMap* map_for(Feature f) const {
    auto it = maps.find(schedule_key(f));
    return it == maps.end() ? nullptr : &it->second;
  }

  /// True when the feature's rate depends on the profile value, i.e. some
  /// threshold lies above 0 (standardized values are never negative).
  bool needs_profile(Feature f) const {
    const RateMap* m = map_for(f);
    return m && !m->empty() && m->rbegin()->first > 0.0;
  }

  /// Throws on hard errors; returns human-readable warnings.
  std::vector<std::string> validate() const {
    if (cache_step < 1) throw std::invalid_argument("schedule: cache_step must be >= 1");
    if (stride.t < 1 || stride.h < 1 || stride.w < 1) throw std::invalid_argument("schedule: stride must be >= 1");
    std::vector<std::string> warnings;
    for (const auto& [f, m] : maps) {
      if (f != Feature::Q && f != Feature::V)
        throw std::invalid_argument("schedule: feature '" + std::string(to_string(f)) +
                                    "' is not schedulable (use Q, or V for K and V)");
      double prev = -1.0;
      for (const auto& [th, r] : m) {
        if (!std::isfinite(th)) throw std::invalid_argument("schedule: non-finite threshold");
        if (!(r >= 0.0 && r < 1.0))
          throw std::invalid_argument("schedule: rate " + std::to_string(r) + " outside [0,1)");
        if (r < prev)
          warnings.push_back("schedule: " + std::string(to_string(f)) + " rate decreases at threshold " +
                             std::to_string(th));
        prev = r;
      }
    }
    return warnings;
  }

  /// Same rate at every step and block: {0: q} for Q and {0: v} for V.
  static ScheduleConfig uniform(double q_rate, double v_rate) {
    ScheduleConfig c;
    if (q_rate > 0.0) c.maps[Feature::Q] = {{0.0, q_rate}};
    if (v_rate > 0.0) c.maps[Feature::V] = {{0.0, v_rate}};
    return c;
  }
};

/// Rate applied to `f` at (t, b). A feature without a schedule entry gets 0.
/// The profile may be omitted when the schedule does not depend on it.
inline double lookup_rate(const ScheduleConfig& cfg, const SimilarityProfile* profile, Feature f, Index t,
                          Index b) {
  const RateMap* m = cfg.map_for(f);
  if (!m || m->empty()) return 0.0;
  if (!cfg.needs_profile(f)) return m->rbegin()->second;
  if (!profile)
    throw std::invalid_argument("schedule for " + std::string(to_string(schedule_key(f))) +
                                " has positive thresholds but no similarity profile was given");
  return lookup_rate(*m, profile->value(f, t, b));
}

inline double lookup_rate(const ScheduleConfig& cfg, const SimilarityProfile& profile, Feature f, Index t,
                          Index b) {
  return lookup_rate(cfg, &profile, f, t, b);
}

// ---------------------------------------------------------------------------
// Matching cache

/// Reuses matching results across sampling steps. Entries for (feature,
/// block) are recomputed at every step that is a multiple of the cache
/// step, or when absent; in between the result from step s*floor(t/s) is
/// returned.
class MatchingCache {
 public:
  struct Entry {
    MatchResult match;
    Partition part;
    Index computed_at = 0;
  };

  explicit MatchingCache(Index cache_step = 5) : step_(cache_step) {
    if (step_ < 1) throw std::invalid_argument("MatchingCache: cache step must be >= 1");
  }

  Index cache_step() const noexcept { return step_; }
  Index anchor(Index t) const noexcept { return step_ * (t / step_); }

  bool needs_recompute(Feature f, Index block, Index t) const {
    auto it = store_.find({static_cast<int>(f), block});
    return it == store_.end() || t % step_ == 0 || it->second.computed_at != anchor(t);
  }

  /// Returns the entry valid at step t, running the matcher first if needed.
  /// On a hit `tokens`, `part` and `rng` are ignored.
  template <class T>
  const Entry& cached_match(Feature f, Index block, Index t, const Matrix<T>& tokens, const Partition& part,
                            SimilarityMetric metric, Rng& rng, CostBreakdown* cost = nullptr) {
    const std::pair<int, Index> k{static_cast<int>(f), block};
    if (needs_recompute(f, block, t)) {
      Entry e{pairwise_best_match(tokens, part, metric, rng, cost), part, anchor(t)};
      store_[k] = std::move(e);
      ++counts_[k];
      last_hit_ = false;
    } else {
      last_hit_ = true;
    }
    return store_.at(k);
  }

  template <class T>
  const MatchResult& cached_match_result(Feature f, Index block, Index t, const Matrix<T>& tokens,
                                         const Partition& part, SimilarityMetric metric, Rng& rng,
                                         CostBreakdown* cost = nullptr) {
    return cached_match(f, block, t, tokens, part, metric, rng, cost).match;
  }

  bool last_was_hit() const noexcept { return last_hit_; }

  std::uint64_t invocations(Feature f, Index block) const {
    auto it = counts_.find({static_cast<int>(f), block});
    return it == counts_.end() ? 0 : it->second;
  }

  std::uint64_t total_invocations() const {
    std::uint64_t s = 0;
    for (const auto& [k, c] : counts_) s += c;
    return s;
  }

  void clear() {
    store_.clear();
    counts_.clear();
  }

 private:
  Index step_;
  std::map<std::pair<int, Index>, Entry> store_;
  std::map<std::pair<int, Index>, std::uint64_t> counts_;
  bool last_hit_ = false;
};

// ---------------------------------------------------------------------------
// Tuning heuristic

enum class Quality { good, bad };

struct TuneStep {
  double threshold;
  double rate;
  Quality quality;
};

struct TuneOptions {
  Feature feature = Feature::Q;
  Index max_iterations = 10;
  /// Cache step, stride and metric of the produced schedules, plus any
  /// fixed maps for other features.
  ScheduleConfig base;
};

struct TuneResult {
  ScheduleConfig config;
  double threshold = 0.0;
  double rate = 0.0;
  /// Set when the very first configuration was rejected; config then has no
  /// entry for the tuned feature.
  bool identity = false;
  std::vector<TuneStep> trace;
};

/// Greedy search over a single (threshold, rate) pair. Starts at (0.5, 0.3).
/// A good result raises the rate by 0.2; a bad one falls back to the last
/// good rate and raises the threshold by 0.1. Stops when the next rate would
/// reach 1, the threshold passes 0.9, or after `max_iterations` queries, and
/// returns the last good configuration. Values move in exact tenths.
inline TuneResult tune_schedule(const std::function<Quality(const ScheduleConfig&)>& oracle,
                                const TuneOptions& opt = {}) {
  auto make = [&](int th, int rate) {
    ScheduleConfig c = opt.base;
    c.maps[schedule_key(opt.feature)] = {{th / 10.0, rate / 10.0}};
    return c;
  };
  TuneResult res;
  int th = 5, rate = 3;
  std::optional<std::pair<int, int>> best;
  int good_rate = 0;
  while (res.trace.size() < opt.max_iterations) {
    const Quality q = oracle(make(th, rate));
    res.trace.push_back({th / 10.0, rate / 10.0, q});
    if (q == Quality::good) {
      best = {th, rate};
      good_rate = rate;
      if (rate + 2 >= 10) break;
      rate += 2;
    } else {
      if (!best) break;
      rate = good_rate;
      if (++th > 9) break;
    }
  }
  if (!best) {
    res.config = opt.base;
    res.config.maps.erase(schedule_key(opt.feature));
    res.identity = true;
    return res;
  }
  res.threshold = best->first / 10.0;
  res.rate = best->second / 10.0;
  res.config = make(best->first, best->second);
  return res;
}

}  // namespace rnr
