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

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epitrace/cells.hpp"
#include "epitrace/errors.hpp"

namespace epitrace {

enum class Intervention { None, ContactTracing, ContactTracingLocation };

inline std::string intervention_name(Intervention i) {
  switch (i) {
    case Intervention::None: return "none";
    case Intervention::ContactTracing: return "contact";
    case Intervention::ContactTracingLocation: return "contact+location";
  }
  return "unknown";
}

/// Config problem tied to one field (or to the JSON text itself).
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error("config field '" + field + "': " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

inline Intervention intervention_from_name(const std::string& name) {
  for (auto i : {Intervention::None, Intervention::ContactTracing, Intervention::ContactTracingLocation}) {
    if (intervention_name(i) == name) return i;
  }
  throw ConfigError("intervention", "expected one of none, contact, contact+location; got '" + name + "'");
}

/// Everything that defines one simulation run. Defaults give a baseline
/// generation-based R_eff of roughly 1.5 to 2 on the default world.
struct ScenarioConfig {
  int agents = 500;
  int width = 20;
  int height = 20;
  int workplaces = 100;
  double adoption = 0.6;
  double beta_contact = 0.0017;
  double beta_fomite = 0.00035;
  double deposit_rate = 1.0;
  double decay_half_life_days = 0.5;
  double exposed_mean_days = 3.0;
  double infectious_mean_days = 5.0;
  double presymptomatic_days = 0.0;  // infectious time before the test clock starts
  double test_delay_days = 2.0;      // symptoms to positive result
  Intervention intervention = Intervention::None;
  std::vector<CellId> shared_space_cells{{3, 3}, {3, 16}, {10, 10}, {16, 3}, {16, 16}};
  int errand_epochs = 4;
  int horizon_days = 120;
  int index_cases = 5;
  int quarantine_days = 14;
  int hotspot_bin_days = 7;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the first offending field.
  void validate() const {
    auto require = [](bool ok, const char* field, const std::string& msg) {
      if (!ok) throw ConfigError(field, msg);
    };
    auto probability = [&](double v, const char* field) {
      require(v >= 0.0 && v <= 1.0, field, "must be a probability in [0, 1], got " + std::to_string(v));
    };
    require(agents >= 2, "agents", "must be >= 2");
    require(width >= 1 && width <= 1000, "width", "must be in 1..1000");
    require(height >= 1 && height <= 1000, "height", "must be in 1..1000");
    require(workplaces >= 1, "workplaces", "must be >= 1");
    probability(adoption, "adoption");
    probability(beta_contact, "beta_contact");
    require(beta_fomite >= 0.0, "beta_fomite", "must be >= 0");
    require(deposit_rate >= 0.0, "deposit_rate", "must be >= 0");
    require(decay_half_life_days > 0.0, "decay_half_life_days", "must be > 0");
    require(exposed_mean_days > 0.0, "exposed_mean_days", "must be > 0");
    require(infectious_mean_days > 0.0, "infectious_mean_days", "must be > 0");
    require(presymptomatic_days >= 0.0, "presymptomatic_days", "must be >= 0");
    require(test_delay_days >= 0.0, "test_delay_days", "must be >= 0");
    require(errand_epochs >= 1 && errand_epochs <= 16, "errand_epochs", "must be in 1..16");
    require(horizon_days >= 1, "horizon_days", "must be >= 1");
    require(index_cases >= 1 && index_cases <= agents, "index_cases", "must be in 1..agents");
    require(quarantine_days >= 1, "quarantine_days", "must be >= 1");
    require(hotspot_bin_days >= 1, "hotspot_bin_days", "must be >= 1");
    for (const auto& c : shared_space_cells) {
      require(c.x >= 0 && c.x < width && c.y >= 0 && c.y < height, "shared_space_cells",
              "cell (" + std::to_string(c.x) + "," + std::to_string(c.y) + ") lies outside the grid");
    }
    require(shared_space_cells.size() < static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
            "shared_space_cells", "must leave at least one cell for homes and workplaces");
    for (std::size_t i = 0; i < shared_space_cells.size(); ++i) {
      for (std::size_t j = i + 1; j < shared_space_cells.size(); ++j) {
        require(shared_space_cells[i] != shared_space_cells[j], "shared_space_cells", "duplicate cell");
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["agents"] = agents;
    j["width"] = width;
    j["height"] = height;
    j["workplaces"] = workplaces;
    j["adoption"] = adoption;
    j["beta_contact"] = beta_contact;
    j["beta_fomite"] = beta_fomite;
    j["deposit_rate"] = deposit_rate;
    j["decay_half_life_days"] = decay_half_life_days;
    j["exposed_mean_days"] = exposed_mean_days;
    j["infectious_mean_days"] = infectious_mean_days;
    j["presymptomatic_days"] = presymptomatic_days;
    j["test_delay_days"] = test_delay_days;
    j["intervention"] = intervention_name(intervention);
    auto cells = nlohmann::json::array();
    for (const auto& c : shared_space_cells) cells.push_back({c.x, c.y});
    j["shared_space_cells"] = cells;
    j["errand_epochs"] = errand_epochs;
    j["horizon_days"] = horizon_days;
    j["index_cases"] = index_cases;
    j["quarantine_days"] = quarantine_days;
    j["hotspot_bin_days"] = hotspot_bin_days;
    j["seed"] = seed;
    return j;
  }

  /// Missing fields keep their defaults; unknown fields are rejected.
  static ScenarioConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    ScenarioConfig cfg;
    for (const auto& [key, value] : j.items()) {
      try {
        if (key == "agents") cfg.agents = value.get<int>();
        else if (key == "width") cfg.width = value.get<int>();
        else if (key == "height") cfg.height = value.get<int>();
        else if (key == "workplaces") cfg.workplaces = value.get<int>();
        else if (key == "adoption") cfg.adoption = value.get<double>();
        else if (key == "beta_contact") cfg.beta_contact = value.get<double>();
        else if (key == "beta_fomite") cfg.beta_fomite = value.get<double>();
        else if (key == "deposit_rate") cfg.deposit_rate = value.get<double>();
        else if (key == "decay_half_life_days") cfg.decay_half_life_days = value.get<double>();
        else if (key == "exposed_mean_days") cfg.exposed_mean_days = value.get<double>();
        else if (key == "infectious_mean_days") cfg.infectious_mean_days = value.get<double>();
        else if (key == "presymptomatic_days") cfg.presymptomatic_days = value.get<double>();
        else if (key == "test_delay_days") cfg.test_delay_days = value.get<double>();
        else if (key == "intervention") cfg.intervention = intervention_from_name(value.get<std::string>());
        else if (key == "shared_space_cells") {
          cfg.shared_space_cells.clear();
          for (const auto& c : value) {
            if (!c.is_array() || c.size() != 2) throw ConfigError(key, "each cell must be an [x, y] pair");
            cfg.shared_space_cells.push_back(CellId{c[0].get<std::int64_t>(), c[1].get<std::int64_t>()});
          }
        } else if (key == "errand_epochs") cfg.errand_epochs = value.get<int>();
        else if (key == "horizon_days") cfg.horizon_days = value.get<int>();
        else if (key == "index_cases") cfg.index_cases = value.get<int>();
        else if (key == "quarantine_days") cfg.quarantine_days = value.get<int>();
        else if (key == "hotspot_bin_days") cfg.hotspot_bin_days = value.get<int>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw ConfigError(key, "unknown field");
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(key, std::string("wrong type: ") + e.what());
      }
    }
    cfg.validate();
    return cfg;
  }

  static ScenarioConfig parse(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("<json>", e.what());
    }
    return from_json(j);
  }

  static ScenarioConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }
};

}  // namespace epitrace
