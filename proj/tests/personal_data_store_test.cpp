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

#include "epitrace/personal_data_store.hpp"

#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gtest/gtest.h"
#include "oracles/frozen_vectors.hpp"

namespace epitrace {
namespace {

constexpr std::int64_t kHour = 3600;

// Random walk around a city centre with irregular sampling gaps.
std::vector<LocationPoint> random_walk(std::mt19937_64& rng, int n, std::int64_t t0 = 0) {
  std::uniform_real_distribution<double> step(-0.004, 0.004);
  std::uniform_int_distribution<int> gap(30, 1800);
  std::vector<LocationPoint> out;
  double lat = 43.72, lon = 10.40;
  std::int64_t t = t0;
  for (int i = 0; i < n; ++i) {
    out.emplace_back(lat, lon, t);
    lat += step(rng);
    lon += step(rng);
    t += gap(rng);
  }
  return out;
}

std::size_t distinct_cells(const std::vector<CoarsenedVisit>& visits) {
  std::set<CellId> cells;
  for (const auto& v : visits) cells.insert(v.cell);
  return cells.size();
}

TEST(LocationPointTest, RejectsOutOfRangeCoordinates) {
  EXPECT_THROW(LocationPoint(90.5, 0, 0), InvalidArgument);
  EXPECT_THROW(LocationPoint(0, -180.1, 0), InvalidArgument);
  EXPECT_NO_THROW(LocationPoint(-90, 180, 0));
}

TEST(GranularityTest, RejectsUnsupportedBins) {
  EXPECT_THROW(Granularity(SpatialLevel::Grid0p01, 30), InvalidArgument);
  EXPECT_NO_THROW(Granularity(SpatialLevel::Grid0p01, 1440));
}

TEST(GranularityTest, NotFinerThanChecksBothAxes) {
  const Granularity floor(SpatialLevel::Grid0p01, 60);
  EXPECT_TRUE(Granularity(SpatialLevel::Grid0p01, 60).not_finer_than(floor));
  EXPECT_TRUE(Granularity(SpatialLevel::Municipality, 1440).not_finer_than(floor));
  EXPECT_FALSE(Granularity(SpatialLevel::Grid0p001, 1440).not_finer_than(floor));
  EXPECT_FALSE(Granularity(SpatialLevel::Grid0p1, 15).not_finer_than(floor));
}

TEST(CoarsenTest, GridCellOfKnownPoint) {
  const std::vector<LocationPoint> one{LocationPoint(43.72, 10.40, 0)};
  const auto visits = coarsen(one, Granularity(SpatialLevel::Grid0p01, 60));
  ASSERT_EQ(visits.size(), 1u);
  EXPECT_EQ(visits[0].cell, (CellId{4372, 1040}));
  EXPECT_EQ(visits[0].cell.x, oracle::kGrid001Lat43p72);
}

TEST(CoarsenTest, GridCellsMatchDecimalOracle) {
  EXPECT_EQ(grid_cell(-0.05, -0.05, SpatialLevel::Grid0p1).y, oracle::kGrid01LonMinus0p05);
  EXPECT_EQ(grid_cell(10.0005, 0, SpatialLevel::Grid0p001).x, oracle::kGrid0001Lat10p0005);
}

TEST(CoarsenTest, BinStartFloorsToTheHour) {
  const std::int64_t t = 10 * kHour + 37 * 60;
  const std::vector<LocationPoint> one{LocationPoint(0, 0, t)};
  EXPECT_EQ(coarsen(one, Granularity(SpatialLevel::Grid0p01, 60))[0].bin_start, 10 * kHour);
}

TEST(CoarsenTest, FivePointsInOneCellAndBinMergeIntoOneVisit) {
  std::vector<LocationPoint> pts;
  for (int i = 0; i < 5; ++i) pts.emplace_back(43.7201 + i * 1e-4, 10.4001, 10 * kHour + i * 300);
  const auto visits = coarsen(pts, Granularity(SpatialLevel::Grid0p01, 60));
  ASSERT_EQ(visits.size(), 1u);
  // Four five-minute gaps plus the capped final point.
  EXPECT_EQ(visits[0].dwell_min, 35);
}

TEST(CoarsenTest, DwellIsCappedPerPoint) {
  const std::vector<LocationPoint> pts{LocationPoint(1, 1, 0), LocationPoint(1, 1, 5 * kHour)};
  const auto visits = coarsen(pts, Granularity(SpatialLevel::Grid0p01, 1440));
  ASSERT_EQ(visits.size(), 1u);
  EXPECT_EQ(visits[0].dwell_min, 30);
}

TEST(CoarsenTest, ReturningToACellStartsANewVisit) {
  const std::vector<LocationPoint> pts{LocationPoint(1.001, 1.001, 0), LocationPoint(1.5, 1.5, 60),
                                       LocationPoint(1.001, 1.001, 120)};
  EXPECT_EQ(coarsen(pts, Granularity(SpatialLevel::Grid0p01, 60)).size(), 3u);
}

TEST(CoarsenTest, UnsortedTrajectoryRejected) {
  const std::vector<LocationPoint> pts{LocationPoint(0, 0, 10), LocationPoint(0, 0, 5)};
  EXPECT_THROW(coarsen(pts, Granularity()), InvalidArgument);
}

TEST(CoarsenTest, MissingMapsRaise) {
  const std::vector<LocationPoint> one{LocationPoint(0, 0, 0)};
  EXPECT_THROW(coarsen(one, Granularity(SpatialLevel::Poi, 60)), MissingMap);
  EXPECT_THROW(coarsen(one, Granularity(SpatialLevel::Municipality, 60)), MissingMap);
}

TEST(CoarsenTest, RegionLookupLabelsAndDropsUnmappedPoints) {
  CellLookup muni;
  muni.labels[grid_cell(43.72, 10.40, SpatialLevel::Grid0p001)] = 50026;
  const std::vector<LocationPoint> pts{LocationPoint(43.72, 10.40, 0), LocationPoint(0, 0, 60),
                                       LocationPoint(43.72, 10.40, 120)};
  const auto visits = coarsen(pts, Granularity(SpatialLevel::Municipality, 60), RegionMaps{nullptr, &muni});
  ASSERT_EQ(visits.size(), 2u);
  EXPECT_EQ(visits[0].cell, (CellId{50026, 0}));
  EXPECT_EQ(visits[1].cell, (CellId{50026, 0}));
}

TEST(CoarsenTest, OutputInvariantsOnRandomWalks) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pts = random_walk(rng, 200, trial * 1000);
    for (int bin : {1, 15, 60, 1440}) {
      const Granularity g(SpatialLevel::Grid0p001, bin);
      const auto visits = coarsen(pts, g);
      for (std::size_t i = 0; i < visits.size(); ++i) {
        EXPECT_GE(visits[i].dwell_min, 1);
        EXPECT_EQ(visits[i].bin_start % g.bin_seconds(), 0);
        if (i > 0) {
          EXPECT_LE(visits[i - 1].bin_start, visits[i].bin_start);
        }
      }
    }
  }
}

// Each step makes one axis strictly coarser; grid cells and bins nest.
TEST(CoarsenTest, CoarserGranularityNeverAddsCellsOrVisits) {
  const std::vector<Granularity> chain{
      Granularity(SpatialLevel::ExactPoint, 1), Granularity(SpatialLevel::Grid0p001, 1),
      Granularity(SpatialLevel::Grid0p001, 15), Granularity(SpatialLevel::Grid0p01, 15),
      Granularity(SpatialLevel::Grid0p01, 60),  Granularity(SpatialLevel::Grid0p1, 60),
      Granularity(SpatialLevel::Grid0p1, 1440)};
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pts = random_walk(rng, 300);
    for (std::size_t i = 1; i < chain.size(); ++i) {
      const auto fine = coarsen(pts, chain[i - 1]);
      const auto coarse = coarsen(pts, chain[i]);
      EXPECT_LE(coarse.size(), fine.size()) << "step " << i;
      EXPECT_LE(distinct_cells(coarse), distinct_cells(fine)) << "step " << i;
    }
  }
}

TEST(MinimumGranularityTest, PolicyTable) {
  EXPECT_FALSE(minimum_granularity(Purpose::ContactUpload).has_value());
  EXPECT_EQ(minimum_granularity(Purpose::LocationUpload), Granularity(SpatialLevel::Grid0p01, 60));
  EXPECT_EQ(minimum_granularity(Purpose::AggregateParticipation), Granularity(SpatialLevel::Grid0p1, 1440));
}

TEST(PersonalDataStoreTest, AppendKeepsTimeOrder) {
  PersonalDataStore pds(1);
  pds.append_location(LocationPoint(1, 1, 100));
  EXPECT_EQ(pds.location_count(), 1u);
  pds.append_location(LocationPoint(2, 2, 50));
  pds.append_location(LocationPoint(3, 3, 75));
  const auto visits = pds.coarsened_history(Granularity(SpatialLevel::Grid0p1, 1), DayRange{0, 0});
  ASSERT_EQ(visits.size(), 3u);
  EXPECT_EQ(visits[0].cell.x, 20);
  EXPECT_EQ(visits[1].cell.x, 30);
  EXPECT_EQ(visits[2].cell.x, 10);
}

TEST(PersonalDataStoreTest, PruneDropsOlderPoints) {
  PersonalDataStore pds(1);
  for (int i = 0; i < 10; ++i) pds.append_location(LocationPoint(0, 0, i * kSecondsPerDay));
  pds.prune_locations(3 * kSecondsPerDay);
  EXPECT_EQ(pds.location_count(), 7u);
  pds.prune_locations(8 * kSecondsPerDay);
  EXPECT_EQ(pds.location_count(), 2u);
  pds.append_location(LocationPoint(0, 0, 0));
  EXPECT_EQ(pds.location_count(), 3u);
  EXPECT_EQ(pds.coarsened_history(Granularity(SpatialLevel::Grid0p1, 1440), DayRange{0, 20}).size(), 3u);
}

TEST(PersonalDataStoreTest, WindowRestrictsHistory) {
  PersonalDataStore pds(1);
  for (int d = 0; d < 5; ++d) pds.append_location(LocationPoint(d, 0, d * kSecondsPerDay + 100));
  EXPECT_EQ(pds.coarsened_history(Granularity(SpatialLevel::Grid0p1, 1440), DayRange{1, 3}).size(), 3u);
  EXPECT_TRUE(pds.coarsened_history(Granularity(SpatialLevel::Grid0p1, 1440), DayRange{}).empty());
}

TEST(SharePayloadTest, ExactPointLocationUploadIsTooFine) {
  PersonalDataStore pds(1);
  pds.grant_consent(Purpose::LocationUpload);
  EXPECT_THROW(pds.build_share_payload(Purpose::LocationUpload, Granularity(SpatialLevel::ExactPoint, 60),
                                       DayRange{0, 0}, 0),
               GranularityTooFine);
  EXPECT_THROW(pds.build_share_payload(Purpose::AggregateParticipation, Granularity(SpatialLevel::Grid0p1, 60),
                                       DayRange{0, 0}, 0),
               GranularityTooFine);
  EXPECT_TRUE(pds.consent_ledger().empty());
}

TEST(SharePayloadTest, ConsentRequired) {
  PersonalDataStore pds(1);
  EXPECT_THROW(
      pds.build_share_payload(Purpose::LocationUpload, Granularity(SpatialLevel::Grid0p01, 60), DayRange{0, 0}, 0),
      ConsentMissing);
  pds.grant_consent(Purpose::LocationUpload);
  EXPECT_NO_THROW(
      pds.build_share_payload(Purpose::LocationUpload, Granularity(SpatialLevel::Grid0p01, 60), DayRange{0, 0}, 0));
  pds.withdraw_consent(Purpose::LocationUpload);
  EXPECT_THROW(
      pds.build_share_payload(Purpose::LocationUpload, Granularity(SpatialLevel::Grid0p01, 60), DayRange{0, 0}, 0),
      ConsentMissing);
}

TEST(SharePayloadTest, EmptyWindowStillConsentedAndPseudonymous) {
  PersonalDataStore pds(1);
  pds.append_location(LocationPoint(1, 1, 10));
  pds.grant_consent(Purpose::LocationUpload);
  auto [payload, consent] =
      pds.build_share_payload(Purpose::LocationUpload, Granularity(SpatialLevel::Grid0p01, 60), DayRange{}, 42);
  ASSERT_NE(payload.visits(), nullptr);
  EXPECT_TRUE(payload.visits()->empty());
  EXPECT_NE(payload.pseudonym, Pseudonym{});
  EXPECT_EQ(consent.issued_at, 42);
  ASSERT_EQ(pds.consent_ledger().size(), 1u);
  EXPECT_EQ(pds.consent_ledger()[0], consent);
}

TEST(SharePayloadTest, LocationBodyEqualsCoarsenedWindow) {
  std::mt19937_64 rng(5);
  PersonalDataStore pds(1);
  for (const auto& p : random_walk(rng, 400)) pds.append_location(p);
  pds.grant_consent(Purpose::LocationUpload);
  const Granularity g(SpatialLevel::Grid0p01, 60);
  auto [payload, consent] = pds.build_share_payload(Purpose::LocationUpload, g, DayRange{0, 2}, 0);
  EXPECT_EQ(*payload.visits(), pds.coarsened_history(g, DayRange{0, 2}));
  EXPECT_EQ(consent.granularity, g);
}

TEST(SharePayloadTest, ContactBodyHoldsDigestsOfWindowedIds) {
  PersonalDataStore pds(1);
  const auto ids = expand_epoch_ids(DailySeed(0, SeedSecret{}));
  pds.contacts().record_encounter(EncounterRecord(ids.ids[0], 0, 0, 15, 30));
  pds.contacts().record_encounter(EncounterRecord(ids.ids[0], 0, 0, 15, 30));
  pds.contacts().record_encounter(EncounterRecord(ids.ids[1], 5, 1, 15, 30));
  pds.grant_consent(Purpose::ContactUpload);
  auto [payload, consent] = pds.build_share_payload(Purpose::ContactUpload, Granularity(), DayRange{0, 3}, 0);
  ASSERT_NE(payload.contact_digests(), nullptr);
  EXPECT_EQ(*payload.contact_digests(), std::vector<std::string>{oracle::kContactDigestOfEpoch0Id});
  EXPECT_FALSE(consent.granularity.has_value());
}

TEST(SharePayloadTest, ThousandPseudonymsAreDistinctAndUnlinked) {
  PersonalDataStore pds(7);
  const DailySeed seed(0, SeedSecret{});
  const auto ids = expand_epoch_ids(seed);
  for (const auto& id : ids.ids) pds.contacts().record_encounter(EncounterRecord(id, 0, 0, 15, 30));
  pds.grant_consent(Purpose::ContactUpload);

  std::set<Pseudonym> seen;
  for (int i = 0; i < 1000; ++i) {
    auto [payload, consent] = pds.build_share_payload(Purpose::ContactUpload, Granularity(), DayRange{0, 0}, i);
    EXPECT_TRUE(seen.insert(payload.pseudonym).second) << "collision at build " << i;
    for (const auto& id : ids.ids) EXPECT_NE(id.bytes, payload.pseudonym);
    EXPECT_FALSE(std::equal(payload.pseudonym.begin(), payload.pseudonym.end(), seed.secret.begin()));
  }
  EXPECT_EQ(pds.consent_ledger().size(), 1000u);
}

TEST(SharePayloadTest, StoresWithDifferentKeysProduceDifferentPseudonyms) {
  PersonalDataStore a(1), b(2);
  a.grant_consent(Purpose::ContactUpload);
  b.grant_consent(Purpose::ContactUpload);
  EXPECT_NE(a.build_share_payload(Purpose::ContactUpload, Granularity(), DayRange{}, 0).first.pseudonym,
            b.build_share_payload(Purpose::ContactUpload, Granularity(), DayRange{}, 0).first.pseudonym);
}

TEST(StopTrackingTest, CollectionOnlyKeepsHistory) {
  PersonalDataStore pds(1);
  pds.append_location(LocationPoint(0, 0, 0));
  pds.stop_tracking_and_erase(EraseScope::CollectionOnly, 10);
  EXPECT_TRUE(pds.tracking_stopped());
  EXPECT_EQ(pds.location_count(), 1u);
  EXPECT_THROW(pds.append_location(LocationPoint(0, 0, 1)), TrackingStopped);
}

TEST(StopTrackingTest, EverythingClearsAndRevokes) {
  PersonalDataStore pds(1);
  pds.append_location(LocationPoint(0, 0, 0));
  pds.contacts().record_encounter(EncounterRecord(EphemeralId{}, 0, 0, 15, 30));
  pds.grant_consent(Purpose::LocationUpload);
  pds.grant_consent(Purpose::ContactUpload);
  pds.build_share_payload(Purpose::LocationUpload, Granularity(SpatialLevel::Grid0p1, 60), DayRange{0, 0}, 5);
  pds.build_share_payload(Purpose::ContactUpload, Granularity(), DayRange{0, 0}, 20);
  pds.stop_tracking_and_erase(EraseScope::Everything, 10);
  EXPECT_EQ(pds.location_count(), 0u);
  EXPECT_TRUE(pds.contacts().empty());
  EXPECT_FALSE(pds.has_consent(Purpose::LocationUpload));
  ASSERT_EQ(pds.consent_ledger().size(), 2u);
  for (const auto& rec : pds.consent_ledger()) {
    ASSERT_TRUE(rec.revoked_at.has_value());
    EXPECT_GE(*rec.revoked_at, rec.issued_at);
  }
  EXPECT_THROW(pds.append_location(LocationPoint(0, 0, 1)), TrackingStopped);
}

TEST(SnapshotTest, RoundTripPreservesPointsExactly) {
  std::mt19937_64 rng(8);
  PersonalDataStore pds(1);
  for (const auto& p : random_walk(rng, 500)) pds.append_location(p);
  pds.prune_locations(3600);
  std::stringstream buf;
  pds.write_snapshot(buf);
  PersonalDataStore back(1);
  back.read_snapshot(buf);
  EXPECT_EQ(back.location_count(), pds.location_count());
  std::stringstream again;
  back.write_snapshot(again);
  EXPECT_EQ(again.str(), buf.str());
}

TEST(SnapshotTest, RejectsMalformedInput) {
  PersonalDataStore pds(1);
  std::istringstream no_header("lat,lon,t\n");
  EXPECT_THROW(pds.read_snapshot(no_header), ParseError);
  std::istringstream bad_row(std::string(PersonalDataStore::kSnapshotHeader) + "\nlat,lon,t\n1,2\n");
  EXPECT_THROW(pds.read_snapshot(bad_row), ParseError);
  std::istringstream out_of_range(std::string(PersonalDataStore::kSnapshotHeader) + "\nlat,lon,t\n91,0,0\n");
  EXPECT_THROW(pds.read_snapshot(out_of_range), ParseError);
}

TEST(ConsentLedgerTest, RoundTrip) {
  PersonalDataStore pds(1);
  pds.grant_consent(Purpose::AggregateParticipation);
  pds.grant_consent(Purpose::ContactUpload);
  pds.build_share_payload(Purpose::AggregateParticipation, Granularity(SpatialLevel::Grid0p1, 1440), DayRange{},
                          3);
  pds.build_share_payload(Purpose::ContactUpload, Granularity(), DayRange{}, 4);
  pds.stop_tracking_and_erase(EraseScope::Everything, 9);
  std::stringstream buf;
  pds.write_consent_ledger(buf);
  const auto back = PersonalDataStore::read_consent_ledger(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], pds.consent_ledger()[0]);
  EXPECT_EQ(back[1], pds.consent_ledger()[1]);
}

TEST(ConsentLedgerTest, RejectsRevocationBeforeIssue) {
  std::istringstream bad(R"({"purpose":"ContactUpload","granularity":null,"issued_at":5,"revoked_at":4})");
  EXPECT_THROW(PersonalDataStore::read_consent_ledger(bad), ParseError);
  std::istringstream junk("{not json\n");
  EXPECT_THROW(PersonalDataStore::read_consent_ledger(junk), ParseError);
}

}  // namespace
}  // namespace epitrace
