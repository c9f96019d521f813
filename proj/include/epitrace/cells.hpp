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

#include <compare>
#include <cstdint>
#include <functional>

namespace epitrace {

/// Opaque spatial cell: a grid index pair, or a POI / municipality label
/// stored in `x` with `y == 0`.
struct CellId {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend auto operator<=>(const CellId&, const CellId&) = default;
};

struct CellIdHash {
  std::size_t operator()(const CellId& c) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(c.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(c.y) + 0x7F4A7C159E3779B9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Location data after coarsening: one stay in a cell during one time bin.
struct CoarsenedVisit {
  CellId cell;
  std::int64_t bin_start = 0;  // seconds since epoch, aligned to the bin
  int dwell_min = 1;
  friend auto operator<=>(const CoarsenedVisit&, const CoarsenedVisit&) = default;
};

inline constexpr std::int64_t kSecondsPerDay = 86400;

/// floor(a / b) for b > 0.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace epitrace
