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
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epitrace/cells.hpp"
#include "epitrace/contact_store.hpp"
#include "epitrace/crypto_ids.hpp"
#include "epitrace/errors.hpp"
#include "epitrace/personal_data_store.hpp"
#include "epitrace/secure_aggregation.hpp"

namespace epitrace {

struct AuthorityParams {
  std::uint64_t k_anon = 5;
  double ratio_min = 0.05;
};

/// Public board of exposure reports (decentralized broadcast). Holds seeds
/// only; location data has a separate store with no shared identifiers.
class ExposureBoard {
 public:
  void publish_report(const ExposureReport& report) {
    std::unique_lock lock(mu_);
    reports_.push_back(report);
  }

  /// Drops reports whose last covered day is outside the retention horizon.
  void prune(std::int64_t today, std::int64_t retention_days = kRetentionDays) {
    std::unique_lock lock(mu_);
    const std::int64_t cutoff = today - retention_days;
    std::erase_if(reports_, [cutoff](const ExposureReport& r) { return r.last_day() <= cutoff; });
  }

  std::vector<ExposureReport> snapshot() const {
    std::shared_lock lock(mu_);
    return reports_;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return reports_.size();
  }

 private:
  mutable std::shared_mutex mu_;
  std::vector<ExposureReport> reports_;
};

/// Centralized variant: maps uploaded contact digests back to registrants.
/// The result is a set, so each registrant is notified at most once.
inline std::set<RegistrantToken> resolve_and_notify(const SeedEscrow& escrow, std::span<const Digest> digests) {
  std::set<RegistrantToken> notified;
  for (const auto& d : digests) {
    if (auto who = escrow.resolve_digest(d)) notified.insert(*who);
  }
  return notified;
}

inline std::set<RegistrantToken> resolve_and_notify(const SeedEscrow& escrow,
                                                    std::span<const std::string> hex_digests) {
  std::vector<Digest> digests;
  digests.reserve(hex_digests.size());
  for (const auto& h : hex_digests) {
    try {
      digests.push_back(array_from_hex<32>(h));
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("contact digest: ") + e.what());
    }
  }
  return resolve_and_notify(escrow, std::span<const Digest>(digests));
}

/// Authority-side accumulation of positive users' visits, keyed by
/// (cell, bin_start). Fed by modality-A payloads and modality-B sums.
class LocationStore {
 public:
  /// Returns false when the payload's pseudonym was already seen in the
  /// current upload window (duplicate upload, ignored).
  bool ingest_location_payload(const SharePayload& payload) {
    if (payload.purpose != Purpose::LocationUpload) {
      throw WrongPurpose("location store accepts LocationUpload payloads only, got " + purpose_name(payload.purpose));
    }
    const auto* visits = payload.visits();
    if (!visits) throw WrongPurpose("LocationUpload payload carries no visit list");
    std::unique_lock lock(mu_);
    if (!window_pseudonyms_.insert(payload.pseudonym).second) return false;
    for (const auto& v : *visits) counts_[{v.cell, v.bin_start}] += 1;
    return true;
  }

  /// Adds a modality-B aggregate computed over `space`.
  void ingest_aggregate(const CellIndexSpace& space, std::span<const std::uint32_t> sums) {
    if (sums.size() != space.dimension()) throw DimensionMismatch("aggregate dimension differs from space");
    std::unique_lock lock(mu_);
    for (std::size_t k = 0; k < sums.size(); ++k) {
      if (sums[k] != 0) counts_[{space.cell_at(k), space.bin_at(k)}] += sums[k];
    }
  }

  /// Ends the dedup window; pseudonyms are discarded.
  void close_upload_window() {
    std::unique_lock lock(mu_);
    window_pseudonyms_.clear();
  }

  std::size_t pseudonyms_held() const {
    std::shared_lock lock(mu_);
    return window_pseudonyms_.size();
  }

  std::map<std::pair<CellId, std::int64_t>, std::uint64_t> counts() const {
    std::shared_lock lock(mu_);
    return counts_;
  }

  /// Distinct cells with any recorded visit, ascending.
  std::vector<CellId> cells() const {
    std::shared_lock lock(mu_);
    std::vector<CellId> out;
    for (const auto& [key, _] : counts_) {
      if (out.empty() || out.back() != key.first) out.push_back(key.first);
    }
    return out;
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::pair<CellId, std::int64_t>, std::uint64_t> counts_;
  std::set<Pseudonym> window_pseudonyms_;
};

/// Internal (unsuppressed) view; publish through published_counts().
struct DensityMap {
  CellIndexSpace space;
  std::vector<std::uint64_t> infected_counts;
  std::optional<std::vector<std::uint64_t>> total_counts;
};

inline DensityMap build_density_map(const LocationStore& store, const CellIndexSpace& space,
                                    std::optional<std::vector<std::uint64_t>> baseline = std::nullopt) {
  DensityMap map{space, std::vector<std::uint64_t>(space.dimension(), 0), std::move(baseline)};
  for (const auto& [key, count] : store.counts()) {
    if (auto idx = space.locate(key.first, key.second)) map.infected_counts[*idx] += count;
  }
  if (map.total_counts) {
    if (map.total_counts->size() != space.dimension()) throw DimensionMismatch("baseline dimension differs from space");
    for (std::size_t k = 0; k < space.dimension(); ++k) {
      if (map.infected_counts[k] > (*map.total_counts)[k]) {
        throw InvalidArgument("infected count exceeds population baseline");
      }
    }
  }
  return map;
}

/// Counts below k are published as 0.
inline std::vector<std::uint64_t> published_counts(const DensityMap& map, const AuthorityParams& params = {}) {
  std::vector<std::uint64_t> out(map.infected_counts.size(), 0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (map.infected_counts[k] >= params.k_anon) out[k] = map.infected_counts[k];
  }
  return out;
}

struct Hotspot {
  CellId cell;
  std::int64_t bin_start = 0;
  std::uint64_t infected_count = 0;
  std::optional<double> ratio;  // absent without a baseline; +inf over a zero baseline

  friend bool operator==(const Hotspot&, const Hotspot&) = default;
};

inline std::vector<Hotspot> detect_hotspots(const DensityMap& map, const AuthorityParams& params = {}) {
  std::vector<Hotspot> hot;
  const auto& space = map.space;
  for (std::size_t k = 0; k < map.infected_counts.size(); ++k) {
    const std::uint64_t infected = map.infected_counts[k];
    if (infected < params.k_anon || infected == 0) continue;
    std::optional<double> ratio;
    if (map.total_counts) {
      const std::uint64_t base = (*map.total_counts)[k];
      ratio = base == 0 ? std::numeric_limits<double>::infinity()
                        : static_cast<double>(infected) / static_cast<double>(base);
      if (*ratio < params.ratio_min) continue;
    }
    hot.push_back(Hotspot{space.cell_at(k), space.bin_at(k), infected, ratio});
  }
  std::sort(hot.begin(), hot.end(), [](const Hotspot& a, const Hotspot& b) {
    if (a.infected_count != b.infected_count) return a.infected_count > b.infected_count;
    if (a.cell != b.cell) return a.cell < b.cell;
    return a.bin_start < b.bin_start;
  });
  return hot;
}

struct RiskMap {
  CellIndexSpace space;
  std::vector<std::uint8_t> level;  // 0..3 per cell x bin

  /// Level at (cell, t); 0 outside the space.
  int level_at(const CellId& cell, std::int64_t t) const {
    auto idx = space.locate(cell, t);
    return idx ? level[*idx] : 0;
  }

  /// Highest level of the cell over all bins; 0 outside the space.
  int max_level(const CellId& cell) const {
    auto c = space.cell_position(cell);
    if (!c) return 0;
    int best = 0;
    const std::size_t nb = space.bins().size();
    for (std::size_t b = 0; b < nb; ++b) best = std::max<int>(best, level[*c * nb + b]);
    return best;
  }
};

/// Hotspots get level 3. Remaining entries are ranked by their published
/// (suppressed) count against the tercile boundaries of all nonzero
/// published counts: top tercile 2, middle tercile 1, otherwise 0.
inline RiskMap publish_risk_map(const DensityMap& map, std::span<const Hotspot> hotspots,
                                const AuthorityParams& params = {}) {
  RiskMap risk{map.space, std::vector<std::uint8_t>(map.space.dimension(), 0)};
  const auto published = published_counts(map, params);

  std::vector<std::uint64_t> nonzero;
  for (auto c : published) {
    if (c > 0) nonzero.push_back(c);
  }
  std::sort(nonzero.begin(), nonzero.end());
  if (!nonzero.empty()) {
    const std::uint64_t lower = nonzero[nonzero.size() / 3];
    const std::uint64_t upper = nonzero[(2 * nonzero.size()) / 3];
    for (std::size_t k = 0; k < published.size(); ++k) {
      const auto c = published[k];
      if (c == 0) continue;
      if (c >= upper) {
        risk.level[k] = 2;
      } else if (c >= lower) {
        risk.level[k] = 1;
      }
    }
  }
  for (const auto& h : hotspots) {
    if (auto idx = map.space.locate(h.cell, h.bin_start)) risk.level[*idx] = 3;
  }
  return risk;
}

// Exports.

inline void export_density_csv(std::ostream& os, const DensityMap& map, const AuthorityParams& params = {}) {
  const auto published = published_counts(map, params);
  os << "cell_x,cell_y,bin_start,count\n";
  for (std::size_t k = 0; k < published.size(); ++k) {
    const CellId c = map.space.cell_at(k);
    os << c.x << ',' << c.y << ',' << map.space.bin_at(k) << ',' << published[k] << '\n';
  }
}

inline void export_risk_csv(std::ostream& os, const RiskMap& risk) {
  os << "cell_x,cell_y,bin_start,level\n";
  for (std::size_t k = 0; k < risk.level.size(); ++k) {
    const CellId c = risk.space.cell_at(k);
    os << c.x << ',' << c.y << ',' << risk.space.bin_at(k) << ',' << static_cast<int>(risk.level[k]) << '\n';
  }
}

/// [{cell:[x,y], bin_start, infected_count, ratio}]; ratio is null without a
/// baseline and the string "inf" over a zero baseline.
inline nlohmann::json hotspots_to_json(std::span<const Hotspot> hotspots) {
  auto arr = nlohmann::json::array();
  for (const auto& h : hotspots) {
    nlohmann::json j;
    j["cell"] = {h.cell.x, h.cell.y};
    j["bin_start"] = h.bin_start;
    j["infected_count"] = h.infected_count;
    if (!h.ratio) {
      j["ratio"] = nullptr;
    } else if (std::isinf(*h.ratio)) {
      j["ratio"] = "inf";
    } else {
      j["ratio"] = *h.ratio;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace epitrace
