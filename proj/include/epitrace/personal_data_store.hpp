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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "epitrace/cells.hpp"
#include "epitrace/contact_store.hpp"
#include "epitrace/crypto_ids.hpp"
#include "epitrace/errors.hpp"
#include "epitrace/sha256.hpp"

namespace epitrace {

struct LocationPoint {
  double lat = 0.0;
  double lon = 0.0;
  std::int64_t t = 0;  // seconds since epoch

  LocationPoint() = default;
  LocationPoint(double latitude, double longitude, std::int64_t time) : lat(latitude), lon(longitude), t(time) {
    if (!(latitude >= -90.0 && latitude <= 90.0)) throw InvalidArgument("latitude must be within [-90, 90]");
    if (!(longitude >= -180.0 && longitude <= 180.0)) throw InvalidArgument("longitude must be within [-180, 180]");
  }

  friend bool operator==(const LocationPoint&, const LocationPoint&) = default;
};

// Spatial levels in coarseness order; comparisons on the enum follow it.
enum class SpatialLevel { ExactPoint, Grid0p001, Grid0p01, Grid0p1, Poi, Municipality };

/// Nano-degrees per grid cell side; 0 for non-grid levels.
constexpr std::int64_t grid_cell_nanodeg(SpatialLevel level) {
  switch (level) {
    case SpatialLevel::Grid0p001: return 1'000'000;
    case SpatialLevel::Grid0p01: return 10'000'000;
    case SpatialLevel::Grid0p1: return 100'000'000;
    default: return 0;
  }
}

inline constexpr std::int64_t kNanodegPerDegree = 1'000'000'000;

inline std::string spatial_name(SpatialLevel level) {
  switch (level) {
    case SpatialLevel::ExactPoint: return "exact";
    case SpatialLevel::Grid0p001: return "grid_0.001";
    case SpatialLevel::Grid0p01: return "grid_0.01";
    case SpatialLevel::Grid0p1: return "grid_0.1";
    case SpatialLevel::Poi: return "poi";
    case SpatialLevel::Municipality: return "municipality";
  }
  return "unknown";
}

inline SpatialLevel spatial_from_name(const std::string& name) {
  for (auto level : {SpatialLevel::ExactPoint, SpatialLevel::Grid0p001, SpatialLevel::Grid0p01,
                     SpatialLevel::Grid0p1, SpatialLevel::Poi, SpatialLevel::Municipality}) {
    if (spatial_name(level) == name) return level;
  }
  throw ParseError("unknown spatial level '" + name + "'");
}

struct Granularity {
  SpatialLevel spatial = SpatialLevel::ExactPoint;
  int bin_minutes = 1;

  Granularity() = default;
  Granularity(SpatialLevel s, int minutes) : spatial(s), bin_minutes(minutes) {
    if (minutes != 1 && minutes != 15 && minutes != 60 && minutes != 1440) {
      throw InvalidArgument("temporal bin must be 1, 15, 60 or 1440 minutes");
    }
  }

  std::int64_t bin_seconds() const { return static_cast<std::int64_t>(bin_minutes) * 60; }

  /// True when this granularity is at least as coarse as `floor` on both axes.
  bool not_finer_than(const Granularity& floor) const {
    return spatial >= floor.spatial && bin_minutes >= floor.bin_minutes;
  }

  friend bool operator==(const Granularity&, const Granularity&) = default;
};

/// Externally supplied region lookup, keyed by the Grid(0.001) cell.
struct CellLookup {
  std::map<CellId, std::int64_t> labels;
};

struct RegionMaps {
  const CellLookup* poi = nullptr;
  const CellLookup* municipality = nullptr;
};

/// Grid index of a point at the given level, computed on integer nano-degrees
/// so that finer cells always nest inside coarser ones.
inline CellId grid_cell(double lat, double lon, SpatialLevel level) {
  const std::int64_t nlat = std::llround(lat * static_cast<double>(kNanodegPerDegree));
  const std::int64_t nlon = std::llround(lon * static_cast<double>(kNanodegPerDegree));
  if (level == SpatialLevel::ExactPoint) return CellId{nlat, nlon};
  const std::int64_t side = grid_cell_nanodeg(level);
  return CellId{floor_div(nlat, side), floor_div(nlon, side)};
}

inline std::int64_t bin_start(std::int64_t t, const Granularity& g) {
  return floor_div(t, g.bin_seconds()) * g.bin_seconds();
}

/// A point stands for at most one epoch of dwell.
inline constexpr std::int64_t kMaxPointDwellSeconds = 15 * 60;

/// Reduces a time-sorted trajectory to visits at granularity `g`.
///
/// Each point is credited with the time until the next point, capped at 15
/// minutes (the last point gets the cap). Consecutive points that land in the
/// same (cell, bin) merge into one visit. Under POI / Municipality, points
/// outside every labelled region are dropped and break the current visit.
inline std::vector<CoarsenedVisit> coarsen(std::span<const LocationPoint> traj, const Granularity& g,
                                           const RegionMaps& maps = {}) {
  const CellLookup* lookup = nullptr;
  if (g.spatial == SpatialLevel::Poi) {
    if (!maps.poi) throw MissingMap("POI granularity requested without a POI map");
    lookup = maps.poi;
  } else if (g.spatial == SpatialLevel::Municipality) {
    if (!maps.municipality) throw MissingMap("municipality granularity requested without a municipality map");
    lookup = maps.municipality;
  }

  std::vector<CoarsenedVisit> visits;
  std::int64_t run_seconds = 0;
  bool open = false;
  auto close_run = [&] {
    if (open) visits.back().dwell_min = static_cast<int>(std::max<std::int64_t>(1, run_seconds / 60));
    open = false;
    run_seconds = 0;
  };

  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& p = traj[i];
    if (i > 0 && p.t < traj[i - 1].t) throw InvalidArgument("coarsen requires a time-sorted trajectory");
    const std::int64_t credit =
        (i + 1 < traj.size()) ? std::min(traj[i + 1].t - p.t, kMaxPointDwellSeconds) : kMaxPointDwellSeconds;

    CellId cell;
    if (lookup) {
      auto it = lookup->labels.find(grid_cell(p.lat, p.lon, SpatialLevel::Grid0p001));
      if (it == lookup->labels.end()) {
        close_run();
        continue;
      }
      cell = CellId{it->second, 0};
    } else {
      cell = grid_cell(p.lat, p.lon, g.spatial);
    }
    const std::int64_t bin = bin_start(p.t, g);

    if (open && visits.back().cell == cell && visits.back().bin_start == bin) {
      run_seconds += credit;
      continue;
    }
    close_run();
    visits.push_back(CoarsenedVisit{cell, bin, 1});
    open = true;
    run_seconds = credit;
  }
  close_run();
  return visits;
}

enum class Purpose { ContactUpload, LocationUpload, AggregateParticipation };

inline std::string purpose_name(Purpose p) {
  switch (p) {
    case Purpose::ContactUpload: return "ContactUpload";
    case Purpose::LocationUpload: return "LocationUpload";
    case Purpose::AggregateParticipation: return "AggregateParticipation";
  }
  return "unknown";
}

inline Purpose purpose_from_name(const std::string& name) {
  for (auto p : {Purpose::ContactUpload, Purpose::LocationUpload, Purpose::AggregateParticipation}) {
    if (purpose_name(p) == name) return p;
  }
  throw ParseError("unknown purpose '" + name + "'");
}

/// Least detail a purpose may ask for. std::nullopt means the purpose carries
/// no location data at all.
inline std::optional<Granularity> minimum_granularity(Purpose purpose) {
  switch (purpose) {
    case Purpose::ContactUpload: return std::nullopt;
    case Purpose::LocationUpload: return Granularity(SpatialLevel::Grid0p01, 60);
    case Purpose::AggregateParticipation: return Granularity(SpatialLevel::Grid0p1, 1440);
  }
  return std::nullopt;
}

struct ConsentRecord {
  Purpose purpose = Purpose::ContactUpload;
  std::optional<Granularity> granularity;  // empty for ContactUpload
  std::int64_t issued_at = 0;
  std::optional<std::int64_t> revoked_at;

  friend bool operator==(const ConsentRecord&, const ConsentRecord&) = default;
};

using Pseudonym = ByteArray<16>;

struct SharePayload {
  Purpose purpose = Purpose::LocationUpload;
  Pseudonym pseudonym{};
  std::variant<std::vector<CoarsenedVisit>, std::vector<std::string>> body;

  const std::vector<CoarsenedVisit>* visits() const { return std::get_if<std::vector<CoarsenedVisit>>(&body); }
  const std::vector<std::string>* contact_digests() const { return std::get_if<std::vector<std::string>>(&body); }
};

/// Inclusive day range; empty when last < first.
struct DayRange {
  std::int64_t first = 0;
  std::int64_t last = -1;
  bool contains_day(std::int64_t day) const { return day >= first && day <= last; }
  bool empty() const { return last < first; }
};

enum class EraseScope { CollectionOnly, Everything };

/// The citizen's personal data store. Raw location points go in and never
/// come back out through the public surface: callers get coarsened visits,
/// share payloads and counts only.
class PersonalDataStore {
 public:
  /// `pseudonym_seed` keys the pseudonym generator; pass a fixed value for
  /// reproducible runs.
  explicit PersonalDataStore(std::uint64_t pseudonym_seed) { key_pseudonyms(pseudonym_seed); }
  PersonalDataStore() {
    std::random_device rd;
    key_pseudonyms((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
  }

  void append_location(const LocationPoint& p) {
    if (collection_stopped_) throw TrackingStopped("location collection was stopped by the user");
    if (location_count() == 0 || locations_.back().t <= p.t) {
      locations_.push_back(p);
      return;
    }
    auto pos = std::upper_bound(live_begin(), locations_.end(), p.t,
                                [](std::int64_t t, const LocationPoint& q) { return t < q.t; });
    locations_.insert(pos, p);
  }

  std::size_t location_count() const { return locations_.size() - head_; }
  bool tracking_stopped() const { return collection_stopped_; }

  /// Drops location points older than `before_t`.
  void prune_locations(std::int64_t before_t) {
    auto keep = std::lower_bound(live_begin(), locations_.end(), before_t,
                                 [](const LocationPoint& q, std::int64_t t) { return q.t < t; });
    head_ = static_cast<std::size_t>(keep - locations_.begin());
    // Compact lazily so daily pruning stays amortized O(1) per point.
    if (head_ > 0 && head_ * 2 >= locations_.size()) {
      locations_.erase(locations_.begin(), keep);
      head_ = 0;
    }
  }

  ContactStore& contacts() { return contacts_; }
  const ContactStore& contacts() const { return contacts_; }

  void grant_consent(Purpose purpose) { consent_flags_.insert(purpose); }
  void withdraw_consent(Purpose purpose) { consent_flags_.erase(purpose); }
  bool has_consent(Purpose purpose) const { return consent_flags_.contains(purpose); }

  std::span<const ConsentRecord> consent_ledger() const { return ledger_; }

  /// Own history at granularity `g`, restricted to `window`. Local use only.
  std::vector<CoarsenedVisit> coarsened_history(const Granularity& g, const DayRange& window,
                                                const RegionMaps& maps = {}) const {
    return coarsen(window_points(window), g, maps);
  }

  /// Builds a sharing payload and appends the matching consent record.
  std::pair<SharePayload, ConsentRecord> build_share_payload(Purpose purpose, const Granularity& g,
                                                             const DayRange& window, std::int64_t now,
                                                             const RegionMaps& maps = {}) {
    auto floor = minimum_granularity(purpose);
    if (floor && !g.not_finer_than(*floor)) {
      throw GranularityTooFine("requested granularity is finer than the minimum allowed for " +
                               purpose_name(purpose));
    }
    if (!has_consent(purpose)) throw ConsentMissing("no consent given for " + purpose_name(purpose));

    SharePayload payload;
    payload.purpose = purpose;
    if (purpose == Purpose::ContactUpload) {
      std::set<std::string> digests;
      for (const auto& rec : contacts_.records()) {
        if (window.contains_day(rec.day)) digests.insert(to_hex(contact_digest(rec.observed)));
      }
      payload.body = std::vector<std::string>(digests.begin(), digests.end());
    } else {
      payload.body = coarsen(window_points(window), g, maps);
    }
    payload.pseudonym = next_pseudonym();

    ConsentRecord consent{purpose, floor ? std::optional<Granularity>(g) : std::nullopt, now, std::nullopt};
    ledger_.push_back(consent);
    return {std::move(payload), consent};
  }

  void stop_tracking_and_erase(EraseScope scope, std::int64_t now) {
    collection_stopped_ = true;
    if (scope == EraseScope::CollectionOnly) return;
    locations_.clear();
    head_ = 0;
    contacts_.clear();
    consent_flags_.clear();
    for (auto& rec : ledger_) {
      if (!rec.revoked_at) rec.revoked_at = std::max(now, rec.issued_at);
    }
  }

  /// Header line with the schema version, then CSV lat,lon,t.
  void write_snapshot(std::ostream& os) const {
    os << kSnapshotHeader << '\n' << "lat,lon,t\n";
    char buf[64];
    for (auto it = live_begin(); it != locations_.end(); ++it) {
      const auto& p = *it;
      auto end = std::to_chars(buf, buf + sizeof buf, p.lat).ptr;
      os.write(buf, end - buf) << ',';
      end = std::to_chars(buf, buf + sizeof buf, p.lon).ptr;
      os.write(buf, end - buf) << ',' << p.t << '\n';
    }
  }

  /// Replaces the location history with the snapshot's contents.
  void read_snapshot(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kSnapshotHeader) throw ParseError("missing or unsupported snapshot header");
    if (!std::getline(is, line) || line != "lat,lon,t") throw ParseError("missing snapshot column header");
    std::vector<LocationPoint> points;
    std::size_t line_no = 2;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      double lat = 0, lon = 0;
      std::int64_t t = 0;
      const char* p = line.data();
      const char* end = line.data() + line.size();
      auto r1 = std::from_chars(p, end, lat);
      if (r1.ec != std::errc{} || r1.ptr == end || *r1.ptr != ',') throw snapshot_error(line_no);
      auto r2 = std::from_chars(r1.ptr + 1, end, lon);
      if (r2.ec != std::errc{} || r2.ptr == end || *r2.ptr != ',') throw snapshot_error(line_no);
      auto r3 = std::from_chars(r2.ptr + 1, end, t);
      if (r3.ec != std::errc{} || r3.ptr != end) throw snapshot_error(line_no);
      try {
        points.emplace_back(lat, lon, t);
      } catch (const InvalidArgument& e) {
        throw ParseError("snapshot line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    std::stable_sort(points.begin(), points.end(),
                     [](const LocationPoint& a, const LocationPoint& b) { return a.t < b.t; });
    locations_ = std::move(points);
    head_ = 0;
  }

  /// One JSON object per line: {purpose, granularity, issued_at, revoked_at}.
  void write_consent_ledger(std::ostream& os) const {
    for (const auto& rec : ledger_) os << consent_to_json(rec).dump() << '\n';
  }

  static std::vector<ConsentRecord> read_consent_ledger(std::istream& is) {
    std::vector<ConsentRecord> out;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      try {
        out.push_back(consent_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("consent ledger: ") + e.what());
      }
    }
    return out;
  }

  static nlohmann::json consent_to_json(const ConsentRecord& rec) {
    nlohmann::json j;
    j["purpose"] = purpose_name(rec.purpose);
    if (rec.granularity) {
      j["granularity"] = {{"spatial", spatial_name(rec.granularity->spatial)},
                          {"bin_minutes", rec.granularity->bin_minutes}};
    } else {
      j["granularity"] = nullptr;
    }
    j["issued_at"] = rec.issued_at;
    j["revoked_at"] = rec.revoked_at ? nlohmann::json(*rec.revoked_at) : nlohmann::json(nullptr);
    return j;
  }

  static ConsentRecord consent_from_json(const nlohmann::json& j) {
    ConsentRecord rec;
    rec.purpose = purpose_from_name(j.at("purpose").get<std::string>());
    const auto& g = j.at("granularity");
    if (!g.is_null()) {
      rec.granularity = Granularity(spatial_from_name(g.at("spatial").get<std::string>()), g.at("bin_minutes").get<int>());
    }
    rec.issued_at = j.at("issued_at").get<std::int64_t>();
    if (!j.at("revoked_at").is_null()) rec.revoked_at = j.at("revoked_at").get<std::int64_t>();
    if (rec.revoked_at && *rec.revoked_at < rec.issued_at) throw ParseError("consent revoked before it was issued");
    return rec;
  }

  static constexpr const char* kSnapshotHeader = "epitrace-pds-snapshot v1";

 private:
  static ParseError snapshot_error(std::size_t line_no) {
    return ParseError("snapshot line " + std::to_string(line_no) + ": expected lat,lon,t");
  }

  std::vector<LocationPoint>::const_iterator live_begin() const {
    return locations_.begin() + static_cast<std::ptrdiff_t>(head_);
  }
  std::vector<LocationPoint>::iterator live_begin() { return locations_.begin() + static_cast<std::ptrdiff_t>(head_); }

  std::span<const LocationPoint> window_points(const DayRange& window) const {
    if (window.empty()) return {};
    auto lo = std::lower_bound(live_begin(), locations_.end(), window.first * kSecondsPerDay,
                               [](const LocationPoint& q, std::int64_t t) { return q.t < t; });
    auto hi = std::lower_bound(live_begin(), locations_.end(), (window.last + 1) * kSecondsPerDay,
                               [](const LocationPoint& q, std::int64_t t) { return q.t < t; });
    return {lo, hi};
  }

  void key_pseudonyms(std::uint64_t seed) {
    Bytes material;
    put_be64(material, seed);
    pseudonym_key_ = Sha256().update("PDS-PSEUDONYM-KEY").update(material).finish();
  }

  // Counter-mode SHA-256 keyed by a per-store secret.
  Pseudonym next_pseudonym() {
    Digest d = Sha256().update(pseudonym_key_).update("PSEUDONYM").update(be32(pseudonym_counter_++)).finish();
    Pseudonym out{};
    std::copy_n(d.begin(), out.size(), out.begin());
    return out;
  }

  std::vector<LocationPoint> locations_;  // sorted by t; [0, head_) already pruned
  std::size_t head_ = 0;
  ContactStore contacts_;
  std::set<Purpose> consent_flags_;
  std::vector<ConsentRecord> ledger_;
  bool collection_stopped_ = false;
  Digest pseudonym_key_{};
  std::uint32_t pseudonym_counter_ = 0;
};

}  // namespace epitrace
