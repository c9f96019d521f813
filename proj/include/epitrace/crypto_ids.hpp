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
#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "epitrace/bytes.hpp"
#include "epitrace/errors.hpp"
#include "epitrace/sha256.hpp"

namespace epitrace {

/// Broadcast identifiers rotate every 15 minutes.
inline constexpr int kEpochsPerDay = 96;
inline constexpr int kEpochMinutes = 15;
inline constexpr std::size_t kSeedBytes = 32;
inline constexpr std::size_t kEphemeralIdBytes = 16;

using SeedSecret = ByteArray<kSeedBytes>;

/// The daily secret at one link of a device's hash chain.
struct DailySeed {
  std::int64_t day = 0;
  SeedSecret secret{};

  DailySeed() = default;
  DailySeed(std::int64_t day_index, const SeedSecret& s) : day(day_index), secret(s) {
    if (day_index < 0) throw InvalidArgument("DailySeed day must be >= 0");
  }

  friend bool operator==(const DailySeed&, const DailySeed&) = default;
};

/// A 16-byte anonymous identifier broadcast during one epoch.
struct EphemeralId {
  ByteArray<kEphemeralIdBytes> bytes{};

  static EphemeralId from_span(ByteView raw) {
    if (raw.size() != kEphemeralIdBytes) throw InvalidArgument("EphemeralId must be 16 bytes");
    EphemeralId id;
    std::memcpy(id.bytes.data(), raw.data(), kEphemeralIdBytes);
    return id;
  }

  std::string hex() const { return to_hex(bytes); }

  friend auto operator<=>(const EphemeralId&, const EphemeralId&) = default;
};

struct EphemeralIdHash {
  std::size_t operator()(const EphemeralId& id) const noexcept {
    // Identifiers are hash outputs, so any eight bytes are already uniform.
    std::uint64_t v;
    std::memcpy(&v, id.bytes.data(), sizeof v);
    return static_cast<std::size_t>(v);
  }
};

/// All identifiers a device broadcasts on one day, indexed by epoch.
struct IdSchedule {
  std::int64_t day = 0;
  std::array<EphemeralId, kEpochsPerDay> ids{};
};

/// Published material for one positive user: the seeds of a contiguous day
/// range, from which every identifier they broadcast can be re-derived.
class ExposureReport {
 public:
  ExposureReport(std::int64_t first_day, std::vector<SeedSecret> seeds)
      : first_day_(first_day), seeds_(std::move(seeds)) {
    if (seeds_.empty()) throw InvalidArgument("ExposureReport needs at least one seed");
    if (first_day_ < 0) throw InvalidArgument("ExposureReport first_day must be >= 0");
  }

  std::int64_t first_day() const { return first_day_; }
  std::int64_t last_day() const { return first_day_ + static_cast<std::int64_t>(seeds_.size()) - 1; }
  std::span<const SeedSecret> secrets() const { return seeds_; }
  std::size_t day_count() const { return seeds_.size(); }

  DailySeed seed(std::size_t i) const { return DailySeed(first_day_ + static_cast<std::int64_t>(i), seeds_.at(i)); }

  /// first_day (8-byte BE), count (4-byte BE), then each 32-byte secret.
  Bytes serialize() const {
    Bytes out;
    out.reserve(12 + seeds_.size() * kSeedBytes);
    put_be64(out, static_cast<std::uint64_t>(first_day_));
    put_be32(out, static_cast<std::uint32_t>(seeds_.size()));
    for (const auto& s : seeds_) out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  static ExposureReport deserialize(ByteView wire) {
    if (wire.size() < 12) throw ParseError("exposure report shorter than header");
    std::uint64_t first = get_be64(wire, 0);
    std::uint32_t count = get_be32(wire, 8);
    if (first > static_cast<std::uint64_t>(INT64_MAX)) throw ParseError("exposure report first_day out of range");
    if (wire.size() != 12 + static_cast<std::size_t>(count) * kSeedBytes) {
      throw ParseError("exposure report length does not match seed count");
    }
    if (count == 0) throw ParseError("exposure report carries no seeds");
    std::vector<SeedSecret> seeds(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::memcpy(seeds[i].data(), wire.data() + 12 + i * kSeedBytes, kSeedBytes);
    }
    return ExposureReport(static_cast<std::int64_t>(first), std::move(seeds));
  }

  friend bool operator==(const ExposureReport&, const ExposureReport&) = default;

 private:
  std::int64_t first_day_;
  std::vector<SeedSecret> seeds_;
};

/// Next link of the chain: secret' = SHA-256(secret). The chain only runs
/// forward; nothing here recovers an earlier day's seed.
inline DailySeed derive_next_seed(const DailySeed& seed) {
  return DailySeed(seed.day + 1, sha256(seed.secret));
}

namespace detail {
inline EphemeralId epoch_id_with(Sha256& h, const SeedSecret& secret, int epoch) {
  Digest d = h.reset().update(secret).update("EPHID").update(be32(static_cast<std::uint32_t>(epoch))).finish();
  EphemeralId id;
  std::memcpy(id.bytes.data(), d.data(), kEphemeralIdBytes);
  return id;
}
}  // namespace detail

/// ids[j] = SHA-256(secret || "EPHID" || be32(j))[0..16).
inline IdSchedule expand_epoch_ids(const DailySeed& seed) {
  IdSchedule schedule;
  schedule.day = seed.day;
  Sha256 h;
  for (int j = 0; j < kEpochsPerDay; ++j) schedule.ids[static_cast<std::size_t>(j)] = detail::epoch_id_with(h, seed.secret, j);
  return schedule;
}

/// The single identifier broadcast during `epoch`; equals expand_epoch_ids(seed).ids[epoch].
inline EphemeralId epoch_id(const DailySeed& seed, int epoch) {
  if (epoch < 0 || epoch >= kEpochsPerDay) throw InvalidArgument("epoch must be in 0..95");
  Sha256 h;
  return detail::epoch_id_with(h, seed.secret, epoch);
}

inline ExposureReport report_from_seeds(std::span<const DailySeed> seeds) {
  if (seeds.empty()) throw InvalidArgument("report_from_seeds needs at least one seed");
  std::vector<SeedSecret> secrets;
  secrets.reserve(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i > 0 && seeds[i].day != seeds[i - 1].day + 1) {
      throw NonContiguousDays("seed days must be contiguous and ascending");
    }
    secrets.push_back(seeds[i].secret);
  }
  return ExposureReport(seeds.front().day, std::move(secrets));
}

/// Every identifier derivable from a report, in (day, epoch) order.
inline std::vector<EphemeralId> derive_report_ids(const ExposureReport& report) {
  std::vector<EphemeralId> ids;
  ids.reserve(report.day_count() * kEpochsPerDay);
  for (std::size_t i = 0; i < report.day_count(); ++i) {
    IdSchedule s = expand_epoch_ids(report.seed(i));
    ids.insert(ids.end(), s.ids.begin(), s.ids.end());
  }
  return ids;
}

/// SHA-256 of an identifier; what a centralized-mode upload carries.
inline Digest contact_digest(const EphemeralId& id) { return sha256(id.bytes); }

/// Opaque handle by which the authority reaches a registered phone.
struct RegistrantToken {
  std::uint64_t value = 0;
  friend auto operator<=>(const RegistrantToken&, const RegistrantToken&) = default;
};

struct EscrowEntry {
  RegistrantToken registrant;
  std::int64_t day = 0;
  std::size_t ids_indexed = 0;
};

struct DigestHash {
  std::size_t operator()(const Digest& d) const noexcept {
    std::uint64_t v;
    std::memcpy(&v, d.data(), sizeof v);
    return static_cast<std::size_t>(v);
  }
};

/// Authority-side table for the centralized variant: devices escrow their
/// daily seeds so the authority can map an identifier back to a phone.
/// Only identifier-to-registrant resolution is kept; no location data.
class SeedEscrow {
 public:
  EscrowEntry register_seed(const DailySeed& seed, RegistrantToken registrant) {
    IdSchedule schedule = expand_epoch_ids(seed);
    std::vector<Digest> digests;
    digests.reserve(kEpochsPerDay);
    for (const auto& id : schedule.ids) digests.push_back(contact_digest(id));

    std::unique_lock lock(mu_);
    if (!registered_.insert({registrant.value, seed.day}).second) {
      throw DuplicateRegistration("seed already escrowed for this registrant and day");
    }
    for (std::size_t j = 0; j < schedule.ids.size(); ++j) {
      by_id_.emplace(schedule.ids[j], registrant);
      by_digest_.emplace(digests[j], registrant);
    }
    return EscrowEntry{registrant, seed.day, schedule.ids.size()};
  }

  std::optional<RegistrantToken> resolve(const EphemeralId& id) const {
    std::shared_lock lock(mu_);
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<RegistrantToken> resolve_digest(const Digest& digest) const {
    std::shared_lock lock(mu_);
    auto it = by_digest_.find(digest);
    if (it == by_digest_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return registered_.size();
  }

 private:
  mutable std::shared_mutex mu_;
  std::set<std::pair<std::uint64_t, std::int64_t>> registered_;
  std::unordered_map<EphemeralId, RegistrantToken, EphemeralIdHash> by_id_;
  std::unordered_map<Digest, RegistrantToken, DigestHash> by_digest_;
};

}  // namespace epitrace
