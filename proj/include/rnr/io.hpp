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

// JSON and CSV formats for schedules, profiles, configs and reports.
// Requires nlohmann/json (vendored as json.hpp).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "rnr/schedule.hpp"
#include "rnr/toydit.hpp"

namespace rnr {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal string that reads back as the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError("not a number: '" + std::string(s) + "'");
  return v;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, std::string_view what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

template <class F>
auto guarded(std::string_view what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

inline json stride_json(const Stride& s) { return json::array({s.t, s.h, s.w}); }
inline Stride stride_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("stride must be an array of three integers");
  return {j[0].get<Index>(), j[1].get<Index>(), j[2].get<Index>()};
}
inline json grid_json(const GridShape& g) { return json::array({g.t, g.h, g.w}); }
inline GridShape grid_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("grid must be an array of three integers");
  return {j[0].get<Index>(), j[1].get<Index>(), j[2].get<Index>()};
}

inline json cost_json(const CostBreakdown& c) {
  return json{{"qk_matmul", c.qk_matmul},     {"av_matmul", c.av_matmul},
              {"projections", c.projections}, {"matching", c.matching},
              {"softmax", c.softmax},         {"total", c.total()}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Schedule

inline json schedule_to_json(const ScheduleConfig& s) {
  json j;
  j["schema_version"] = kSchemaVersion;
  for (const auto& [f, m] : s.maps) {
    json jm = json::object();
    for (const auto& [th, r] : m) jm[format_double(th)] = r;
    j[std::string(to_string(f))] = jm;
  }
  j["cache_step"] = s.cache_step;
  j["stride"] = detail::stride_json(s.stride);
  j["metric"] = std::string(to_string(s.metric));
  return j;
}

inline ScheduleConfig schedule_from_json(const json& j) {
  return detail::guarded("schedule", [&] {
    if (!j.is_object()) throw ConfigError("schedule: expected a JSON object");
    ScheduleConfig s;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "schema_version") {
        if (it->get<int>() != kSchemaVersion)
          throw ConfigError("schedule: unsupported schema_version " + it->dump());
      } else if (key == "cache_step") {
        const auto v = it->get<long long>();
        if (v < 1) throw ConfigError("schedule: cache_step must be >= 1");
        s.cache_step = static_cast<Index>(v);
      } else if (key == "stride") {
        s.stride = detail::stride_from(*it);
      } else if (key == "metric") {
        s.metric = parse_metric(it->get<std::string>());
      } else if (key == "Q" || key == "V") {
        if (!it->is_object()) throw ConfigError("schedule: '" + key + "' must map thresholds to rates");
        RateMap m;
        for (auto e = it->begin(); e != it->end(); ++e) {
          const double th = parse_double(e.key());
          if (!m.emplace(th, e->get<double>()).second)
            throw ConfigError("schedule: threshold " + e.key() + " repeated in '" + key + "'");
        }
        s.maps[parse_feature(key)] = std::move(m);
      } else if (key == "K" || key == "H") {
        throw ConfigError("schedule: feature '" + key + "' cannot be scheduled; K follows the 'V' entry");
      } else {
        throw ConfigError("schedule: unknown key '" + key + "'");
      }
    }
    s.validate();
    return s;
  });
}

// ---------------------------------------------------------------------------
// Profile

inline json profile_to_json(const SimilarityProfile& p) {
  const auto& m = p.metadata();
  json j;
  j["schema_version"] = kSchemaVersion;
  json meta;
  meta["grid"] = detail::grid_json(m.grid);
  meta["stride"] = detail::stride_json(m.stride);
  meta["metric"] = std::string(to_string(m.metric));
  meta["num_timesteps"] = m.num_timesteps;
  meta["num_blocks"] = m.num_blocks;
  json feats = json::array();
  for (Feature f : m.features) feats.push_back(std::string(to_string(f)));
  meta["features"] = feats;
  meta["seed"] = m.seed;
  j["metadata"] = meta;
  json recs = json::array();
  for (const auto& r : p.records())
    recs.push_back(json{{"feature", std::string(to_string(r.feature))},
                        {"t", r.t},
                        {"b", r.b},
                        {"sim_raw", r.sim_raw},
                        {"sim_std", r.sim_std},
                        {"p10", r.p10},
                        {"p90", r.p90}});
  j["records"] = recs;
  return j;
}

inline SimilarityProfile profile_from_json(const json& j) {
  return detail::guarded("profile", [&] {
    if (j.value("schema_version", 0) != kSchemaVersion) throw ConfigError("profile: unsupported schema_version");
    const json& meta = j.at("metadata");
    ProfileMetadata m;
    m.grid = detail::grid_from(meta.at("grid"));
    m.stride = detail::stride_from(meta.at("stride"));
    m.metric = parse_metric(meta.at("metric").get<std::string>());
    m.num_timesteps = meta.at("num_timesteps").get<Index>();
    m.num_blocks = meta.at("num_blocks").get<Index>();
    m.features.clear();
    for (const auto& f : meta.at("features")) m.features.push_back(parse_feature(f.get<std::string>()));
    m.seed = meta.value("seed", std::uint64_t{0});
    std::vector<ProfileRecord> recs;
    for (const auto& r : j.at("records")) {
      ProfileRecord pr;
      pr.feature = parse_feature(r.at("feature").get<std::string>());
      pr.t = r.at("t").get<Index>();
      pr.b = r.at("b").get<Index>();
      pr.sim_raw = r.at("sim_raw").get<double>();
      pr.sim_std = r.at("sim_std").get<double>();
      pr.p10 = r.value("p10", 0.0);
      pr.p90 = r.value("p90", 0.0);
      recs.push_back(pr);
    }
    return SimilarityProfile::from_records(std::move(m), std::move(recs));
  });
}

// ---------------------------------------------------------------------------
// Pipeline config

/// "schedule" may be inline; "profile" is a path and is left to the caller.
inline PipelineConfig config_from_json(const json& j) {
  return detail::guarded("config", [&] {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    detail::reject_unknown(j,
                           {"schema_version", "grid", "d", "blocks", "heads", "timesteps", "seed", "mode",
                            "precision", "rope", "scale", "reduce_op", "init", "clusters", "cluster_noise",
                            "duplicate_fraction", "gamma", "match_q_post_rope", "redraw_partitions", "norm_stats",
                            "kl_k", "schedule", "profile"},
                           "config");
    PipelineConfig c;
    if (j.contains("schema_version") && j["schema_version"].get<int>() != kSchemaVersion)
      throw ConfigError("config: unsupported schema_version");
    if (j.contains("grid")) c.grid = detail::grid_from(j["grid"]);
    c.d = j.value("d", c.d);
    c.blocks = j.value("blocks", c.blocks);
    c.heads = j.value("heads", c.heads);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("precision")) c.precision = parse_precision(j["precision"].get<std::string>());
    c.rope = j.value("rope", c.rope);
    c.scale = j.value("scale", c.scale);
    if (j.contains("reduce_op")) c.reduce_op = parse_reduction_op(j["reduce_op"].get<std::string>());
    if (j.contains("init")) c.init = parse_init(j["init"].get<std::string>());
    c.clusters = j.value("clusters", c.clusters);
    c.cluster_noise = j.value("cluster_noise", c.cluster_noise);
    c.duplicate_fraction = j.value("duplicate_fraction", c.duplicate_fraction);
    c.gamma = j.value("gamma", c.gamma);
    c.match_q_post_rope = j.value("match_q_post_rope", c.match_q_post_rope);
    c.redraw_partitions = j.value("redraw_partitions", c.redraw_partitions);
    c.norm_stats = j.value("norm_stats", c.norm_stats);
    c.kl_k = j.value("kl_k", c.kl_k);
    if (j.contains("schedule")) c.schedule = schedule_from_json(j["schedule"]);
    return c;
  });
}

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["grid"] = detail::grid_json(c.grid);
  j["d"] = c.d;
  j["blocks"] = c.blocks;
  j["heads"] = c.heads;
  j["timesteps"] = c.timesteps;
  j["seed"] = c.seed;
  j["mode"] = std::string(to_string(c.mode));
  j["precision"] = std::string(to_string(c.precision));
  j["rope"] = c.rope;
  j["scale"] = c.scale;
  j["reduce_op"] = std::string(to_string(c.reduce_op));
  j["init"] = std::string(to_string(c.init));
  j["clusters"] = c.clusters;
  j["cluster_noise"] = c.cluster_noise;
  j["duplicate_fraction"] = c.duplicate_fraction;
  j["gamma"] = c.gamma;
  j["match_q_post_rope"] = c.match_q_post_rope;
  j["redraw_partitions"] = c.redraw_partitions;
  j["norm_stats"] = c.norm_stats;
  j["kl_k"] = c.kl_k;
  if (c.schedule) j["schedule"] = schedule_to_json(*c.schedule);
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

/// FNV-1a of the canonical schedule JSON; identifies a schedule in reports.
inline std::uint64_t schedule_hash(const std::optional<ScheduleConfig>& s) {
  const std::string text = s ? schedule_to_json(*s).dump() : std::string("none");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline json report_to_json(const RunReport& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = config_to_json(r.config);
  j["checksum"] = hex64(r.checksum);
  j["total_ms"] = r.total_ms;
  j["bsm_invocations"] = r.bsm_invocations;
  j["measured"] = detail::cost_json(r.measured);
  j["predicted"] = detail::cost_json(r.predicted);
  j["flops"] = r.measured.flops();
  json blocks = json::array();
  for (const auto& b : r.blocks) {
    json jb{{"t", b.t},
            {"b", b.b},
            {"rate_q", b.rate_q},
            {"rate_kv", b.rate_kv},
            {"m_q", b.m_q},
            {"m_kv", b.m_kv},
            {"matching_runs", b.matching_runs},
            {"macs", b.measured.total()},
            {"wall_ms", b.wall_ms}};
    if (!std::isnan(b.kl_q)) jb["kl_q"] = b.kl_q;
    if (!std::isnan(b.kl_kv)) jb["kl_kv"] = b.kl_kv;
    blocks.push_back(jb);
  }
  j["blocks"] = blocks;
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// CSV

/// CSV output: comma separated, CRLF-free ("\n" line ends), a field is
/// wrapped in double quotes when it holds a comma, quote, CR or LF, and
/// quotes inside are doubled. The first row is the header.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header) : out_(out), width_(header.size()) {
    row(header);
  }

  static std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string s = "\"";
    for (char c : field) {
      if (c == '"') s += '"';
      s += c;
    }
    s += '"';
    return s;
  }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != width_)
      throw std::invalid_argument("csv: row has " + std::to_string(fields.size()) + " fields, header has " +
                                  std::to_string(width_));
    for (Index i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << '\n';
  }

 private:
  std::ostream& out_;
  Index width_;
};

}  // namespace rnr
