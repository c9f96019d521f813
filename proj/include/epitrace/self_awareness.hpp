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
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <span>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "epitrace/authority.hpp"
#include "epitrace/cells.hpp"
#include "epitrace/errors.hpp"

// Citizen-side analytics. Everything here takes the user's own history and
// the public risk map and returns values to the caller; nothing is sent.
namespace epitrace {

struct ExposureScore {
  double total = 0.0;
  std::vector<std::pair<CoarsenedVisit, double>> per_visit;
};

/// contribution = dwell_min * level(cell, bin).
inline ExposureScore exposure_score(std::span<const CoarsenedVisit> visits, const RiskMap& risk) {
  ExposureScore score;
  score.per_visit.reserve(visits.size());
  for (const auto& v : visits) {
    auto idx = risk.space.locate(v.cell, v.bin_start);
    if (!idx) throw SpaceMismatch("visit lies outside the risk map's space");
    const double contribution = static_cast<double>(v.dwell_min) * risk.level[*idx];
    score.per_visit.emplace_back(v, contribution);
    score.total += contribution;
  }
  return score;
}

inline constexpr int kRoutineMinDays = 3;

struct RoutineSegment {
  CellId cell;
  std::vector<std::int64_t> bins;  // distinct bin starts visited, ascending
  int days_visited = 0;
  int risk_level = 0;

  friend bool operator==(const RoutineSegment&, const RoutineSegment&) = default;
};

/// Cells the user returns to on at least `min_days` distinct days and whose
/// area risk (highest level of the cell anywhere in the map) is 2 or more.
/// Sorted by risk level, then days visited, descending; ties by cell.
inline std::vector<RoutineSegment> flag_risky_segments(std::span<const CoarsenedVisit> history, const RiskMap& risk,
                                                       int min_days = kRoutineMinDays) {
  std::set<std::int64_t> all_days;
  std::map<CellId, std::pair<std::set<std::int64_t>, std::set<std::int64_t>>> per_cell;  // days, bins
  for (const auto& v : history) {
    const std::int64_t day = floor_div(v.bin_start, kSecondsPerDay);
    all_days.insert(day);
    auto& entry = per_cell[v.cell];
    entry.first.insert(day);
    entry.second.insert(v.bin_start);
  }
  if (static_cast<int>(all_days.size()) < min_days) {
    throw InsufficientHistory("history covers fewer distinct days than the routine threshold");
  }

  std::vector<RoutineSegment> flagged;
  for (const auto& [cell, sets] : per_cell) {
    const int days = static_cast<int>(sets.first.size());
    if (days < min_days) continue;
    const int level = risk.max_level(cell);
    if (level < 2) continue;
    flagged.push_back(RoutineSegment{cell, {sets.second.begin(), sets.second.end()}, days, level});
  }
  std::sort(flagged.begin(), flagged.end(), [](const RoutineSegment& a, const RoutineSegment& b) {
    if (a.risk_level != b.risk_level) return a.risk_level > b.risk_level;
    if (a.days_visited != b.days_visited) return a.days_visited > b.days_visited;
    return a.cell < b.cell;
  });
  return flagged;
}

/// Rectangular 4-neighbour lattice of cells {x0..x0+width) x {y0..y0+height).
struct GridLattice {
  std::int64_t x0 = 0;
  std::int64_t y0 = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;

  bool contains(const CellId& c) const {
    return c.x >= x0 && c.x < x0 + width && c.y >= y0 && c.y < y0 + height;
  }
  std::size_t index(const CellId& c) const {
    return static_cast<std::size_t>((c.x - x0) * height + (c.y - y0));
  }
  CellId cell(std::size_t idx) const {
    return CellId{x0 + static_cast<std::int64_t>(idx) / height, y0 + static_cast<std::int64_t>(idx) % height};
  }
  std::size_t size() const { return static_cast<std::size_t>(width * height); }

  /// Neighbours in ascending cell order.
  std::vector<CellId> neighbours(const CellId& c) const {
    std::vector<CellId> out;
    for (auto n : {CellId{c.x - 1, c.y}, CellId{c.x, c.y - 1}, CellId{c.x, c.y + 1}, CellId{c.x + 1, c.y}}) {
      if (contains(n)) out.push_back(n);
    }
    return out;
  }
};

inline constexpr std::int64_t kRiskExchangeRate = 10;

struct Route {
  std::vector<CellId> cells;
  std::int64_t cost = 0;
};

/// Cost of stepping into `target` during `bin`.
inline std::int64_t step_cost(const RiskMap& risk, const CellId& target, std::int64_t bin, std::int64_t lambda) {
  return 1 + lambda * risk.level_at(target, bin);
}

/// Minimum-cost path with edge cost 1 + lambda * level(target cell, bin).
/// Among equal-cost paths the one with fewer hops wins, then the
/// lexicographically smallest cell sequence.
///
/// Runs Dijkstra backwards from `dest` over (cost, hops) labels, then walks
/// forward from `origin` always taking the smallest neighbour that stays on
/// an optimal path.
inline Route safer_route(const GridLattice& grid, const CellId& origin, const CellId& dest, const RiskMap& risk,
                         std::int64_t bin, std::int64_t lambda = kRiskExchangeRate) {
  if (!grid.contains(origin) || !grid.contains(dest)) throw InvalidArgument("route endpoints must lie inside the grid");
  using Label = std::pair<std::int64_t, std::int64_t>;  // cost, hops
  constexpr Label kInf{std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max()};

  std::vector<Label> to_dest(grid.size(), kInf);
  using Item = std::pair<Label, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  to_dest[grid.index(dest)] = {0, 0};
  pq.push({{0, 0}, grid.index(dest)});
  while (!pq.empty()) {
    auto [label, idx] = pq.top();
    pq.pop();
    if (label != to_dest[idx]) continue;
    const CellId here = grid.cell(idx);
    // Reverse edge prev -> here costs step_cost(here).
    const std::int64_t w = step_cost(risk, here, bin, lambda);
    for (const auto& prev : grid.neighbours(here)) {
      Label cand{label.first + w, label.second + 1};
      auto& slot = to_dest[grid.index(prev)];
      if (cand < slot) {
        slot = cand;
        pq.push({cand, grid.index(prev)});
      }
    }
  }
  if (to_dest[grid.index(origin)] == kInf) throw Unreachable("destination cannot be reached from origin");

  Route route;
  route.cost = to_dest[grid.index(origin)].first;
  route.cells.push_back(origin);
  CellId here = origin;
  while (here != dest) {
    const Label need = to_dest[grid.index(here)];
    bool advanced = false;
    for (const auto& next : grid.neighbours(here)) {
      const Label rest = to_dest[grid.index(next)];
      if (rest == kInf) continue;
      if (Label{rest.first + step_cost(risk, next, bin, lambda), rest.second + 1} == need) {
        route.cells.push_back(next);
        here = next;
        advanced = true;
        break;
      }
    }
    if (!advanced) throw Unreachable("no optimal successor found");
  }
  return route;
}

// Local reports.

inline nlohmann::json score_to_json(const ExposureScore& score) {
  nlohmann::json j;
  j["total"] = score.total;
  auto visits = nlohmann::json::array();
  for (const auto& [v, c] : score.per_visit) {
    visits.push_back({{"cell", {v.cell.x, v.cell.y}}, {"bin_start", v.bin_start}, {"dwell_min", v.dwell_min},
                      {"contribution", c}});
  }
  j["per_visit"] = std::move(visits);
  return j;
}

inline nlohmann::json segments_to_json(std::span<const RoutineSegment> segments) {
  auto arr = nlohmann::json::array();
  for (const auto& s : segments) {
    arr.push_back({{"cell", {s.cell.x, s.cell.y}},
                   {"bins", s.bins},
                   {"days_visited", s.days_visited},
                   {"risk_level", s.risk_level}});
  }
  return arr;
}

inline void export_route_csv(std::ostream& os, const Route& route) {
  os << "step,cell_x,cell_y\n";
  for (std::size_t i = 0; i < route.cells.size(); ++i) {
    os << i << ',' << route.cells[i].x << ',' << route.cells[i].y << '\n';
  }
}

}  // namespace epitrace
