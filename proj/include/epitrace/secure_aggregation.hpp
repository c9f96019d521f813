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
#include <cstring>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "epitrace/bytes.hpp"
#include "epitrace/cells.hpp"
#include "epitrace/crypto_ids.hpp"
#include "epitrace/errors.hpp"
#include "epitrace/sha256.hpp"

namespace epitrace {

/// Coordinate system of an aggregate: D = |cells| * |bins| entries laid out
/// cell-major. A bin covers [bin_start, bin_start + bin_seconds).
class CellIndexSpace {
 public:
  CellIndexSpace() = default;
  CellIndexSpace(std::vector<CellId> cells, std::vector<std::int64_t> bins, std::int64_t bin_seconds)
      : cells_(std::move(cells)), bins_(std::move(bins)), bin_seconds_(bin_seconds) {
    if (bin_seconds_ <= 0) throw InvalidArgument("bin width must be positive");
    for (std::size_t i = 1; i < bins_.size(); ++i) {
      if (bins_[i] < bins_[i - 1] + bin_seconds_) {
        throw InvalidArgument("bins must be ascending and non-overlapping");
      }
    }
    cell_index_.reserve(cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      if (!cell_index_.emplace(cells_[i], i).second) throw InvalidArgument("duplicate cell in index space");
    }
  }

  std::span<const CellId> cells() const { return cells_; }
  std::span<const std::int64_t> bins() const { return bins_; }
  std::int64_t bin_seconds() const { return bin_seconds_; }
  std::size_t dimension() const { return cells_.size() * bins_.size(); }

  std::optional<std::size_t> cell_position(const CellId& cell) const {
    auto it = cell_index_.find(cell);
    if (it == cell_index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> bin_position(std::int64_t t) const {
    auto it = std::upper_bound(bins_.begin(), bins_.end(), t);
    if (it == bins_.begin()) return std::nullopt;
    --it;
    if (t >= *it + bin_seconds_) return std::nullopt;
    return static_cast<std::size_t>(it - bins_.begin());
  }

  /// Flat index of the entry containing (cell, t), if inside the space.
  std::optional<std::size_t> locate(const CellId& cell, std::int64_t t) const {
    auto c = cell_position(cell);
    if (!c) return std::nullopt;
    auto b = bin_position(t);
    if (!b) return std::nullopt;
    return *c * bins_.size() + *b;
  }

  CellId cell_at(std::size_t flat) const { return cells_.at(flat / bins_.size()); }
  std::int64_t bin_at(std::size_t flat) const { return bins_.at(flat % bins_.size()); }

  friend bool operator==(const CellIndexSpace& a, const CellIndexSpace& b) {
    return a.cells_ == b.cells_ && a.bins_ == b.bins_ && a.bin_seconds_ == b.bin_seconds_;
  }

 private:
  std::vector<CellId> cells_;
  std::vector<std::int64_t> bins_;
  std::int64_t bin_seconds_ = 1;
  std::unordered_map<CellId, std::size_t, CellIdHash> cell_index_;
};

inline constexpr std::uint32_t kMaxContributionCount = 1u << 16;
inline constexpr std::uint32_t kMaxParticipants = 1u << 16;

/// One participant's plaintext counts over a space.
struct ContributionVector {
  std::vector<std::uint32_t> counts;

  ContributionVector() = default;
  explicit ContributionVector(std::vector<std::uint32_t> c) : counts(std::move(c)) {
    for (auto v : counts) {
      if (v >= kMaxContributionCount) throw InvalidArgument("contribution entry exceeds 2^16 bound");
    }
  }
};

/// Counts one per visit; visits outside the space are ignored.
inline ContributionVector contribution_from_visits(const CellIndexSpace& space,
                                                   std::span<const CoarsenedVisit> visits) {
  std::vector<std::uint32_t> counts(space.dimension(), 0);
  for (const auto& v : visits) {
    if (auto idx = space.locate(v.cell, v.bin_start)) {
      if (++counts[*idx] >= kMaxContributionCount) throw InvalidArgument("contribution entry exceeds 2^16 bound");
    }
  }
  return ContributionVector(std::move(counts));
}

struct PairwiseSeed {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  SeedSecret secret{};

  PairwiseSeed() = default;
  PairwiseSeed(std::uint32_t lo, std::uint32_t hi, const SeedSecret& s) : i(lo), j(hi), secret(s) {
    if (lo >= hi) throw InvalidArgument("pairwise seed requires i < j");
  }
};

struct MaskedShare {
  std::uint32_t participant = 0;
  std::vector<std::uint32_t> values;  // each in [0, 2^32)

  /// participant (4-byte BE), D (4-byte BE), then D 4-byte BE values.
  Bytes serialize() const {
    Bytes out;
    out.reserve(8 + 4 * values.size());
    put_be32(out, participant);
    put_be32(out, static_cast<std::uint32_t>(values.size()));
    for (auto v : values) put_be32(out, v);
    return out;
  }

  static MaskedShare deserialize(ByteView wire) {
    if (wire.size() < 8) throw ParseError("masked share shorter than header");
    MaskedShare share;
    share.participant = get_be32(wire, 0);
    const std::uint32_t dim = get_be32(wire, 4);
    if (wire.size() != 8 + 4 * static_cast<std::size_t>(dim)) throw ParseError("masked share length does not match D");
    share.values.resize(dim);
    for (std::uint32_t k = 0; k < dim; ++k) share.values[k] = get_be32(wire, 8 + 4 * static_cast<std::size_t>(k));
    return share;
  }

  friend bool operator==(const MaskedShare&, const MaskedShare&) = default;
};

/// mask[k] = first 4 bytes (BE) of SHA-256(secret || "MASK" || be32(k)).
inline std::vector<std::uint32_t> pairwise_mask(const PairwiseSeed& seed, std::size_t dimension) {
  if (dimension == 0) throw InvalidArgument("mask dimension must be >= 1");
  std::vector<std::uint32_t> mask(dimension);
  Sha256 prefix;
  prefix.update(seed.secret).update("MASK");
  for (std::size_t k = 0; k < dimension; ++k) {
    Sha256 h = prefix;
    Digest d = h.update(be32(static_cast<std::uint32_t>(k))).finish();
    mask[k] = get_be32(d, 0);
  }
  return mask;
}

/// Adds the masks shared with higher-indexed peers and subtracts those shared
/// with lower-indexed peers, so that all masks cancel in the sum.
inline MaskedShare mask_contribution(const ContributionVector& v, std::uint32_t me,
                                     std::span<const PairwiseSeed> seeds, std::uint32_t n) {
  if (me >= n) throw InvalidArgument("participant index out of range");
  const std::size_t dim = v.counts.size();
  MaskedShare share{me, std::vector<std::uint32_t>(v.counts.begin(), v.counts.end())};
  if (n == 1) return share;
  if (dim == 0) throw InvalidArgument("contribution dimension must be >= 1");

  std::vector<const PairwiseSeed*> by_peer(n, nullptr);
  for (const auto& s : seeds) {
    if (s.i == me && s.j < n) by_peer[s.j] = &s;
    if (s.j == me && s.i < n) by_peer[s.i] = &s;
  }
  for (std::uint32_t peer = 0; peer < n; ++peer) {
    if (peer == me) continue;
    if (!by_peer[peer]) throw MissingSeed("no pairwise seed shared with participant " + std::to_string(peer));
  }
  for (std::uint32_t peer = 0; peer < n; ++peer) {
    if (peer == me) continue;
    auto mask = pairwise_mask(*by_peer[peer], dim);
    if (peer > me) {
      for (std::size_t k = 0; k < dim; ++k) share.values[k] += mask[k];
    } else {
      for (std::size_t k = 0; k < dim; ++k) share.values[k] -= mask[k];
    }
  }
  return share;
}

/// Sums a complete round of shares. Any missing, duplicated or mis-sized share
/// aborts the whole round; no partial sum is returned.
inline std::vector<std::uint32_t> aggregate(std::span<const MaskedShare> shares, std::uint32_t n,
                                            std::size_t dimension) {
  if (n == 0 || n > kMaxParticipants) throw InvalidArgument("participant count must be in 1..2^16");
  if (shares.size() != n) {
    throw WrongShareCount("expected " + std::to_string(n) + " shares, got " + std::to_string(shares.size()));
  }
  std::vector<bool> seen(n, false);
  for (const auto& s : shares) {
    if (s.values.size() != dimension) throw DimensionMismatch("share dimension differs from D");
    if (s.participant >= n || seen[s.participant]) {
      throw WrongShareCount("shares do not cover each participant exactly once");
    }
    seen[s.participant] = true;
  }
  std::vector<std::uint32_t> sum(dimension, 0);
  for (const auto& s : shares) {
    for (std::size_t k = 0; k < dimension; ++k) sum[k] += s.values[k];
  }
  return sum;
}

/// Trusted-setup dealer: one fresh secret per unordered pair, drawn from `rng`.
template <class Urbg>
std::vector<PairwiseSeed> deal_pairwise_seeds(std::uint32_t n, Urbg& rng) {
  std::vector<PairwiseSeed> seeds;
  seeds.reserve(static_cast<std::size_t>(n) * (n > 0 ? n - 1 : 0) / 2);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) {
      SeedSecret secret{};
      for (std::size_t b = 0; b < secret.size(); b += 8) {
        std::uint64_t word = rng();
        std::memcpy(secret.data() + b, &word, 8);
      }
      seeds.emplace_back(i, j, secret);
    }
  }
  return seeds;
}

/// Seeds from a full deal that involve participant `me`.
inline std::vector<PairwiseSeed> seeds_involving(std::span<const PairwiseSeed> all, std::uint32_t me) {
  std::vector<PairwiseSeed> out;
  for (const auto& s : all) {
    if (s.i == me || s.j == me) out.push_back(s);
  }
  return out;
}

/// Runs one complete round (deal, mask, aggregate) over the given contributions.
template <class Urbg>
std::vector<std::uint32_t> secure_sum(std::span<const ContributionVector> inputs, std::size_t dimension, Urbg& rng) {
  const auto n = static_cast<std::uint32_t>(inputs.size());
  auto seeds = deal_pairwise_seeds(n, rng);
  std::vector<MaskedShare> shares;
  shares.reserve(n);
  for (std::uint32_t me = 0; me < n; ++me) {
    if (inputs[me].counts.size() != dimension) throw DimensionMismatch("contribution dimension differs from D");
    shares.push_back(mask_contribution(inputs[me], me, seeds_involving(seeds, me), n));
  }
  return aggregate(shares, n, dimension);
}

}  // namespace epitrace
