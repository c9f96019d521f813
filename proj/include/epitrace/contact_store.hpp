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
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "epitrace/crypto_ids.hpp"

namespace epitrace {

inline constexpr std::int64_t kRetentionDays = 14;

/// Thresholds that make an encounter "close and prolonged".
struct ExposureParams {
  int min_minutes = 15;        // cumulative per day
  int attenuation_cutoff = 60; // lower attenuation = closer
};

/// One identifier heard during one epoch.
struct EncounterRecord {
  EphemeralId observed;
  std::int64_t day = 0;
  int epoch = 0;
  int duration_min = 1;
  int attenuation = 0;

  EncounterRecord() = default;
  EncounterRecord(const EphemeralId& id, std::int64_t d, int e, int duration, int atten)
      : observed(id), day(d), epoch(e), duration_min(duration), attenuation(atten) {
    if (e < 0 || e >= kEpochsPerDay) throw InvalidArgument("encounter epoch must be in 0..95");
    if (duration < 1 || duration > kEpochMinutes) throw InvalidArgument("encounter duration must be in 1..15 minutes");
    if (atten < 0 || atten > 100) throw InvalidArgument("encounter attenuation must be in 0..100");
    if (d < 0) throw InvalidArgument("encounter day must be >= 0");
  }

  friend bool operator==(const EncounterRecord&, const EncounterRecord&) = default;
};

struct ExposureEvent {
  std::int64_t day = 0;
  int cumulative_min = 0;
  std::vector<int> matched_epochs;  // sorted, unique

  friend bool operator==(const ExposureEvent&, const ExposureEvent&) = default;
};

/// Device-local encounter log. Single writer; matching happens here and
/// produces values only for the caller.
class ContactStore {
 public:
  void record_encounter(const EncounterRecord& rec) { records_.push_back(rec); }

  /// Keeps records with day > today - retention. Idempotent.
  void prune(std::int64_t today, std::int64_t retention_days = kRetentionDays) {
    const std::int64_t cutoff = today - retention_days;
    std::erase_if(records_, [cutoff](const EncounterRecord& r) { return r.day <= cutoff; });
  }

  void clear() { records_.clear(); }

  std::span<const EncounterRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// Line-delimited export: day,epoch,duration_min,attenuation,hex(observed).
  void export_lines(std::ostream& os) const {
    for (const auto& r : records_) {
      os << r.day << ',' << r.epoch << ',' << r.duration_min << ',' << r.attenuation << ',' << r.observed.hex()
         << '\n';
    }
  }

  static ContactStore import_lines(std::istream& is) {
    ContactStore store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream fields(line);
      std::string day, epoch, duration, atten, hex;
      if (!std::getline(fields, day, ',') || !std::getline(fields, epoch, ',') ||
          !std::getline(fields, duration, ',') || !std::getline(fields, atten, ',') ||
          !std::getline(fields, hex)) {
        throw ParseError("contact store line " + std::to_string(line_no) + ": expected 5 fields");
      }
      try {
        auto raw = from_hex(hex);
        store.record_encounter(EncounterRecord(EphemeralId::from_span(raw), std::stoll(day), std::stoi(epoch),
                                               std::stoi(duration), std::stoi(atten)));
      } catch (const std::exception& e) {
        throw ParseError("contact store line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    return store;
  }

 private:
  std::vector<EncounterRecord> records_;
};

/// Identifiers of one report, derived once and matched against any number of
/// stores. Matching is a pure function of (store, report).
class ReportMatcher {
 public:
  explicit ReportMatcher(const ExposureReport& report, ExposureParams params = {}) : params_(params) {
    auto derived = derive_report_ids(report);
    ids_.insert(derived.begin(), derived.end());
  }

  /// One event per day whose qualifying minutes reach the threshold, ordered
  /// by day.
  std::vector<ExposureEvent> match(const ContactStore& store) const {
    struct DayAccum {
      int minutes = 0;
      std::vector<int> epochs;
    };
    std::map<std::int64_t, DayAccum> per_day;
    for (const auto& rec : store.records()) {
      if (rec.attenuation > params_.attenuation_cutoff) continue;
      if (!ids_.contains(rec.observed)) continue;
      auto& acc = per_day[rec.day];
      acc.minutes += rec.duration_min;
      acc.epochs.push_back(rec.epoch);
    }

    std::vector<ExposureEvent> events;
    for (auto& [day, acc] : per_day) {
      if (acc.minutes < params_.min_minutes) continue;
      std::sort(acc.epochs.begin(), acc.epochs.end());
      acc.epochs.erase(std::unique(acc.epochs.begin(), acc.epochs.end()), acc.epochs.end());
      events.push_back(ExposureEvent{day, acc.minutes, std::move(acc.epochs)});
    }
    return events;
  }

  bool contains(const EphemeralId& id) const { return ids_.contains(id); }

 private:
  ExposureParams params_;
  std::unordered_set<EphemeralId, EphemeralIdHash> ids_;
};

/// Matches the store against a published report by re-deriving the report's
/// identifiers locally.
inline std::vector<ExposureEvent> check_exposure(const ContactStore& store, const ExposureReport& report,
                                                 const ExposureParams& params = {}) {
  if (store.empty()) return {};
  return ReportMatcher(report, params).match(store);
}

}  // namespace epitrace
