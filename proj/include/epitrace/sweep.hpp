/*
 * Copyright 2026 The Epitrace Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "epitrace/epi_sim.hpp"
#include "epitrace/scenario_config.hpp"

namespace epitrace {

/// A base scenario, named axes of values and the seeds run at every point.
struct SweepGrid {
  ScenarioConfig base;
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;
  std::vector<std::uint64_t> seeds;

  std::size_t point_count() const {
    std::size_t n = 1;
    for (const auto& axis : axes) n *= axis.second.size();
    return n;
  }

  /// Axis values of point `index`; the last axis varies fastest.
  std::vector<nlohmann::json> point(std::size_t index) const {
    std::vector<nlohmann::json> values(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      const auto& vals = axes[a].second;
      values[a] = vals[index % vals.size()];
      index /= vals.size();
    }
    return values;
  }

  ScenarioConfig config_at(std::size_t index, std::uint64_t seed) const {
    nlohmann::json j = base.to_json();
    const auto values = point(index);
    for (std::size_t a = 0; a < axes.size(); ++a) j[axes[a].first] = values[a];
    j["seed"] = seed;
    return ScenarioConfig::from_json(j);
  }

  /// Format: {"base": {...}, "sweep": {"field": [values...]}, "seeds": [..] or N}.
  /// Axes are ordered by field name.
  static SweepGrid from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("<root>", "sweep config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (key != "base" && key != "sweep" && key != "seeds") throw ConfigError(key, "unknown field");
    }
    SweepGrid grid;
    if (j.contains("base")) grid.base = ScenarioConfig::from_json(j["base"]);
    if (j.contains("sweep")) {
      const auto& sw = j["sweep"];
      if (!sw.is_object()) throw ConfigError("sweep", "must map field names to value lists");
      const auto known = ScenarioConfig{}.to_json();
      for (const auto& [field, values] : sw.items()) {
        if (field == "seed") throw ConfigError("sweep.seed", "use the top-level seeds list instead");
        if (!known.contains(field)) throw ConfigError("sweep." + field, "unknown field");
        if (!values.is_array() || values.empty()) throw ConfigError("sweep." + field, "must be a non-empty list");
        grid.axes.emplace_back(field, std::vector<nlohmann::json>(values.begin(), values.end()));
      }
    }
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      try {
        if (s.is_number_integer()) {
          const auto n = s.get<std::int64_t>();
          if (n < 1) throw ConfigError("seeds", "count must be >= 1");
          for (std::int64_t k = 1; k <= n; ++k) grid.seeds.push_back(static_cast<std::uint64_t>(k));
        } else if (s.is_array() && !s.empty()) {
          for (const auto& v : s) grid.seeds.push_back(v.get<std::uint64_t>());
        } else {
          throw ConfigError("seeds", "must be a positive count or a non-empty list");
        }
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("seeds", std::string("wrong type: ") + e.what());
      }
    } else {
      grid.seeds.push_back(grid.base.seed);
    }
    // Every point must validate before anything runs.
    for (std::size_t p = 0; p < grid.point_count(); ++p) {
      try {
        (void)grid.config_at(p, grid.seeds.front());
      } catch (const ConfigError& e) {
        throw ConfigError("sweep." + e.field(), e.what());
      }
    }
    return grid;
  }

  static SweepGrid parse(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("<json>", e.what());
    }
    return from_json(j);
  }
};

struct SweepRow {
  std::vector<nlohmann::json> point;
  std::uint64_t seed = 0;
  SimMetrics metrics;
};

/// Runs every (point, seed) pair. Rows come back in (point, seed) order
/// whatever the thread count, since each run owns its own state.
inline std::vector<SweepRow> run_sweep(const SweepGrid& grid, unsigned threads = 1) {
  const std::size_t points = grid.point_count();
  const std::size_t total = points * grid.seeds.size();
  std::vector<SweepRow> rows(total);
  std::vector<ScenarioConfig> configs;
  configs.reserve(total);
  for (std::size_t p = 0; p < points; ++p) {
    for (std::size_t s = 0; s < grid.seeds.size(); ++s) {
      rows[p * grid.seeds.size() + s].point = grid.point(p);
      rows[p * grid.seeds.size() + s].seed = grid.seeds[s];
      configs.push_back(grid.config_at(p, grid.seeds[s]));
    }
  }
  auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t r = worker; r < total; r += stride) rows[r].metrics = run_scenario(configs[r]);
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(total, 1));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  return rows;
}

inline constexpr std::size_t kSweepGenerations = 6;

inline std::string csv_field(const std::string& raw) {
  if (raw.find_first_of(",\"\n") == std::string::npos) return raw;
  std::string out = "\"";
  for (char c : raw) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// One CSV row per run: axis values, seed, then headline metrics.
inline void write_sweep_csv(std::ostream& os, const SweepGrid& grid, const std::vector<SweepRow>& rows) {
  for (const auto& axis : grid.axes) os << axis.first << ',';
  os << "seed,attack_rate,traced_fraction,hotspot_recall,hotspot_precision,quarantine_person_days,"
        "detectable_pair_fraction,contact_pairs,total_infections,contact_infections,fomite_infections";
  for (std::size_t g = 0; g < kSweepGenerations; ++g) os << ",r_gen" << g;
  os << '\n';
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& row : rows) {
    for (const auto& v : row.point) os << csv_field(v.is_string() ? v.get<std::string>() : v.dump()) << ',';
    const auto& m = row.metrics;
    os << row.seed << ',' << num(m.attack_rate) << ',' << num(m.traced_fraction) << ',' << num(m.hotspot_recall)
       << ',' << num(m.hotspot_precision) << ',' << num(m.quarantine_person_days) << ','
       << num(m.detectable_pair_fraction) << ',' << m.contact_pairs << ',' << m.total_infections << ','
       << m.contact_infections << ',' << m.fomite_infections;
    for (std::size_t g = 0; g < kSweepGenerations; ++g) os << ',' << num(m.r_eff(g));
    os << '\n';
  }
}

}  // namespace epitrace
