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
#include <bitset>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "epitrace/authority.hpp"
#include "epitrace/cells.hpp"
#include "epitrace/contact_store.hpp"
#include "epitrace/crypto_ids.hpp"
#include "epitrace/personal_data_store.hpp"
#include "epitrace/scenario_config.hpp"

namespace epitrace {

enum class HealthState { S, E, I, R, Q };

inline char state_letter(HealthState s) { return "SEIRQ"[static_cast<int>(s)]; }

enum class Channel { Contact, Fomite };

inline const char* channel_name(Channel c) { return c == Channel::Contact ? "contact" : "fomite"; }

/// Ground-truth transmission event.
struct InfectionEvent {
  std::int64_t epoch = 0;
  int infectee = 0;
  int source = -1;  // contact: the infector; fomite: a depositor drawn by remaining load
  Channel channel = Channel::Contact;
  CellId cell;
  int generation = 0;
};

struct NotificationEvent {
  std::int64_t epoch = 0;
  int agent = 0;
  int reporter = 0;
  std::vector<ExposureEvent> exposures;
};

struct TestEvent {
  std::int64_t epoch = 0;
  int agent = 0;
  bool report_published = false;
  bool location_uploaded = false;
};

/// What happened during one call of step_epoch().
struct EpochEvents {
  std::vector<InfectionEvent> infections;
  std::vector<TestEvent> tests;
  std::vector<NotificationEvent> notifications;
};

struct DailyRow {
  int day = 0;
  int s = 0, e = 0, i = 0, r = 0, q = 0;
  int new_infections = 0;
  int cumulative_infected = 0;
  int reports = 0;
  int notifications = 0;
};

struct SimMetrics {
  double attack_rate = 0.0;
  std::vector<double> r_eff_by_generation;
  std::vector<int> cases_by_generation;
  double traced_fraction = 0.0;
  double hotspot_recall = 0.0;
  double hotspot_precision = 0.0;
  double quarantine_person_days = 0.0;
  std::uint64_t contact_pairs = 0;
  std::uint64_t detectable_pairs = 0;
  double detectable_pair_fraction = 0.0;
  int total_infections = 0;
  int contact_infections = 0;
  int fomite_infections = 0;
  int tests = 0;
  int reports_published = 0;
  int location_payloads = 0;
  int notifications = 0;
  int fomite_sites = 0;
  int detected_sites = 0;

  /// R of generation g, or 0 when that generation never occurred.
  double r_eff(std::size_t g) const { return g < r_eff_by_generation.size() ? r_eff_by_generation[g] : 0.0; }

  /// Secondary infections per case pooled over generations first..last.
  double pooled_r_eff(std::size_t first, std::size_t last) const {
    double cases = 0.0, secondaries = 0.0;
    for (std::size_t g = first; g <= last && g < cases_by_generation.size(); ++g) {
      cases += cases_by_generation[g];
      secondaries += r_eff_by_generation[g] * cases_by_generation[g];
    }
    return cases > 0.0 ? secondaries / cases : 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["attack_rate"] = attack_rate;
    j["r_eff_by_generation"] = r_eff_by_generation;
    j["cases_by_generation"] = cases_by_generation;
    j["traced_fraction"] = traced_fraction;
    j["hotspot_recall"] = hotspot_recall;
    j["hotspot_precision"] = hotspot_precision;
    j["quarantine_person_days"] = quarantine_person_days;
    j["contact_pairs"] = contact_pairs;
    j["detectable_pairs"] = detectable_pairs;
    j["detectable_pair_fraction"] = detectable_pair_fraction;
    j["total_infections"] = total_infections;
    j["contact_infections"] = contact_infections;
    j["fomite_infections"] = fomite_infections;
    j["tests"] = tests;
    j["reports_published"] = reports_published;
    j["location_payloads"] = location_payloads;
    j["notifications"] = notifications;
    j["fomite_sites"] = fomite_sites;
    j["detected_sites"] = detected_sites;
    return j;
  }
};

/// Hooks for audits. Every callback fires synchronously inside the run.
class SimObserver {
 public:
  virtual ~SimObserver() = default;
  /// First time an agent's identifier for an epoch is heard by another device.
  virtual void on_broadcast(int /*agent*/, std::int64_t /*day*/, int /*epoch*/, const EphemeralId& /*id*/) {}
  virtual void on_report(int /*reporter*/, const ExposureReport& /*report*/) {}
  virtual void on_location_payload(int /*agent*/, const SharePayload& /*payload*/) {}
  virtual void on_notification(const NotificationEvent& /*event*/, const ContactStore& /*store*/,
                               const ExposureReport& /*report*/) {}
};

/// Simulated world cells are 0.01 degree squares anchored here.
inline constexpr double kWorldOriginLat = 43.0;
inline constexpr double kWorldOriginLon = 10.0;
inline constexpr double kWorldCellDeg = 0.01;

inline LocationPoint world_cell_center(const CellId& c, std::int64_t t) {
  return LocationPoint(kWorldOriginLat + kWorldCellDeg * (static_cast<double>(c.x) + 0.5),
                       kWorldOriginLon + kWorldCellDeg * (static_cast<double>(c.y) + 0.5), t);
}

/// Grid(0.01) cell of the world origin; subtract to get back world coordinates.
inline CellId world_grid_offset() {
  return grid_cell(kWorldOriginLat + 0.5 * kWorldCellDeg, kWorldOriginLon + 0.5 * kWorldCellDeg,
                   SpatialLevel::Grid0p01);
}

struct Agent {
  int id = 0;
  CellId home;
  CellId work;
  HealthState disease = HealthState::S;  // never Q; quarantine is tracked separately
  std::int64_t state_since = 0;
  std::int64_t transition_at = std::numeric_limits<std::int64_t>::max();
  std::int64_t quarantine_until = -1;  // exclusive epoch
  bool isolated = false;               // positive and isolating until recovery
  std::optional<std::int64_t> test_at;
  std::optional<std::int64_t> infectious_since;
  bool has_app = false;
  int generation = -1;
  std::unique_ptr<PersonalDataStore> pds;
  DailySeed seed;
  std::deque<DailySeed> recent_seeds;
  std::array<EphemeralId, kEpochsPerDay> ids_today{};  // filled on first use
  std::bitset<kEpochsPerDay> ids_ready;
  std::vector<std::pair<int, std::int64_t>> notified_by;  // reporter, epoch

  bool quarantined(std::int64_t epoch) const { return isolated || epoch < quarantine_until; }
  HealthState state(std::int64_t epoch) const { return quarantined(epoch) ? HealthState::Q : disease; }
};

struct WorldState {
  int width = 0;
  int height = 0;
  std::vector<double> contamination;   // row-major y * width + x
  std::vector<std::vector<std::pair<int, double>>> deposits;  // per cell: (depositor, decayed load)
  std::int64_t epoch = 0;
};

/// Deterministic agent-based SEIR+Q simulation with contact and fomite
/// transmission. All randomness comes from run-seeded generators consumed in
/// a fixed order (agents by ascending id, cells row-major).
class Simulator {
 public:
  explicit Simulator(ScenarioConfig cfg, SimObserver* observer = nullptr)
      : cfg_(std::move(cfg)),
        observer_(observer),
        rng_(cfg_.seed),
        crypto_rng_(splitmix(cfg_.seed ^ 0xA5A5A5A5DEADBEEFULL)) {
    cfg_.validate();
    init();
  }

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  const ScenarioConfig& config() const { return cfg_; }
  const WorldState& world() const { return world_; }
  const std::vector<Agent>& agents() const { return agents_; }
  const ExposureBoard& board() const { return board_; }
  const LocationStore& location_store() const { return location_store_; }
  const std::vector<InfectionEvent>& infections() const { return infections_; }
  const std::vector<DailyRow>& daily() const { return daily_; }
  const std::vector<std::string>& event_log() const { return log_; }
  const std::vector<Hotspot>& hotspots() const { return hotspots_; }
  std::int64_t epoch() const { return world_.epoch; }
  std::int64_t horizon_epochs() const { return static_cast<std::int64_t>(cfg_.horizon_days) * kEpochsPerDay; }
  bool finished() const { return world_.epoch >= horizon_epochs(); }

  int count(HealthState s) const {
    int n = 0;
    for (const auto& a : agents_) n += a.state(world_.epoch) == s;
    return n;
  }

  /// Advances the world by one epoch: movement, contact transmission, fomite
  /// deposit and pickup, decay, encounter logging, disease progression, then
  /// the tests and notifications that fall due.
  EpochEvents step_epoch() {
    EpochEvents events;
    const std::int64_t e = world_.epoch;
    const std::int64_t day = e / kEpochsPerDay;
    const int slot = static_cast<int>(e % kEpochsPerDay);
    if (slot == 0) start_day(day);

    move(e, slot);
    contact_transmission(e, events);
    fomite_transmission(e, events);
    decay();
    log_encounters(day, slot);
    progress(e);
    run_tests(e, events);

    for (int q = 0; q < cfg_.agents; ++q) {
      if (agents_[static_cast<std::size_t>(q)].quarantined(e)) quarantine_epochs_ += 1;
    }
    for (const auto& inf : events.infections) {
      infections_.push_back(inf);
      ++day_new_infections_;
    }
    if (slot == kEpochsPerDay - 1) close_day(day);
    world_.epoch = e + 1;
    return events;
  }

  void run() {
    while (!finished()) step_epoch();
    finalize();
  }

  /// Computes end-of-run aggregates (hotspots and metrics). Idempotent.
  void finalize() {
    if (finalized_) return;
    finalized_ = true;
    if (cfg_.intervention == Intervention::ContactTracingLocation) build_hotspots();
  }

  SimMetrics metrics() const {
    SimMetrics m;
    int ever = 0;
    for (const auto& a : agents_) ever += a.generation >= 0;
    m.attack_rate = static_cast<double>(ever) / cfg_.agents;

    std::vector<int> cases, secondaries;
    for (const auto& a : agents_) {
      if (a.generation < 0) continue;
      if (static_cast<std::size_t>(a.generation) >= cases.size()) cases.resize(a.generation + 1, 0);
      cases[a.generation] += 1;
    }
    secondaries.assign(cases.size(), 0);
    for (const auto& inf : infections_) {
      if (inf.source >= 0) secondaries[static_cast<std::size_t>(agents_[inf.source].generation)] += 1;
    }
    m.cases_by_generation = cases;
    for (std::size_t g = 0; g < cases.size(); ++g) {
      m.r_eff_by_generation.push_back(cases[g] ? static_cast<double>(secondaries[g]) / cases[g] : 0.0);
    }

    int traced = 0;
    for (const auto& inf : infections_) {
      if (inf.channel == Channel::Contact) {
        m.contact_infections += 1;
        if (was_traced(inf)) traced += 1;
      } else {
        m.fomite_infections += 1;
      }
    }
    m.total_infections = static_cast<int>(infections_.size());
    m.traced_fraction = infections_.empty() ? 0.0 : static_cast<double>(traced) / infections_.size();

    std::set<CellId> sites;
    for (const auto& inf : infections_) {
      if (inf.channel == Channel::Fomite) sites.insert(inf.cell);
    }
    std::set<CellId> detected;
    const CellId offset = world_grid_offset();
    for (const auto& h : hotspots_) detected.insert(CellId{h.cell.x - offset.x, h.cell.y - offset.y});
    int hit = 0;
    for (const auto& c : sites) hit += detected.contains(c);
    m.fomite_sites = static_cast<int>(sites.size());
    m.detected_sites = static_cast<int>(detected.size());
    m.hotspot_recall = sites.empty() ? 0.0 : static_cast<double>(hit) / sites.size();
    m.hotspot_precision = detected.empty() ? 0.0 : static_cast<double>(hit) / detected.size();

    m.quarantine_person_days = static_cast<double>(quarantine_epochs_) / kEpochsPerDay;
    m.contact_pairs = contact_pairs_;
    m.detectable_pairs = detectable_pairs_;
    m.detectable_pair_fraction =
        contact_pairs_ ? static_cast<double>(detectable_pairs_) / static_cast<double>(contact_pairs_) : 0.0;
    m.tests = tests_;
    m.reports_published = reports_;
    m.location_payloads = payloads_;
    m.notifications = notifications_;
    return m;
  }

  // Output artifacts.

  void write_metrics_csv(std::ostream& os) const {
    os << "day,S,E,I,R,Q,new_infections,cumulative_infected,reports,notifications,r_eff\n";
    // Case reproduction number by infection day: secondaries of the agents
    // infected that day, divided by their number.
    std::vector<int> cohort(static_cast<std::size_t>(cfg_.horizon_days), 0);
    std::vector<int> cohort_secondaries(static_cast<std::size_t>(cfg_.horizon_days), 0);
    for (const auto& a : agents_) {
      if (a.generation >= 0) cohort[static_cast<std::size_t>(infected_day_[a.id])] += 1;
    }
    for (const auto& inf : infections_) {
      if (inf.source >= 0) cohort_secondaries[static_cast<std::size_t>(infected_day_[inf.source])] += 1;
    }
    char buf[64];
    for (const auto& row : daily_) {
      os << row.day << ',' << row.s << ',' << row.e << ',' << row.i << ',' << row.r << ',' << row.q << ','
         << row.new_infections << ',' << row.cumulative_infected << ',' << row.reports << ',' << row.notifications
         << ',';
      const auto d = static_cast<std::size_t>(row.day);
      if (cohort[d] > 0) {
        std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(cohort_secondaries[d]) / cohort[d]);
        os << buf;
      }
      os << '\n';
    }
  }

  nlohmann::json hotspots_json() const { return hotspots_to_json(hotspots_); }

  void write_event_log(std::ostream& os) const {
    for (const auto& line : log_) os << line << '\n';
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng_()) * n) >> 64);
  }

  std::int64_t draw_duration(double mean_days) {
    const double u = uniform();
    const double epochs = -std::log1p(-u) * mean_days * kEpochsPerDay;
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(epochs)));
  }

  std::size_t cell_index(const CellId& c) const {
    return static_cast<std::size_t>(c.y * cfg_.width + c.x);
  }

  CellId random_cell() {
    const auto idx = uniform_index(static_cast<std::uint64_t>(cfg_.width) * cfg_.height);
    return CellId{static_cast<std::int64_t>(idx % cfg_.width), static_cast<std::int64_t>(idx / cfg_.width)};
  }

  // Homes and workplaces never sit on a shared space.
  CellId random_private_cell() {
    for (;;) {
      CellId c = random_cell();
      if (!is_shared_.contains(cell_index(c))) return c;
    }
  }

  void init() {
    const int n = cfg_.agents;
    world_.width = cfg_.width;
    world_.height = cfg_.height;
    world_.contamination.assign(static_cast<std::size_t>(cfg_.width) * cfg_.height, 0.0);
    world_.deposits.assign(world_.contamination.size(), {});
    for (const auto& c : cfg_.shared_space_cells) is_shared_.insert(cell_index(c));
    decay_factor_ = std::exp2(-1.0 / (cfg_.decay_half_life_days * kEpochsPerDay));

    agents_.resize(static_cast<std::size_t>(n));
    infected_day_.assign(static_cast<std::size_t>(n), 0);
    position_.assign(static_cast<std::size_t>(n), CellId{});
    errand_cell_.assign(static_cast<std::size_t>(n), CellId{});
    errand_start_.assign(static_cast<std::size_t>(n), -1);
    last_met_day_.assign(static_cast<std::size_t>(n) * n, std::numeric_limits<std::int32_t>::min());
    pair_seen_.assign(static_cast<std::size_t>(n) * n, false);

    // Households of 1..4 agents share a home cell; workplaces are a fixed
    // random subset of cells.
    std::vector<CellId> workplaces;
    for (int w = 0; w < cfg_.workplaces; ++w) workplaces.push_back(random_private_cell());
    int id = 0;
    while (id < n) {
      const int size = 1 + static_cast<int>(uniform_index(4));
      const CellId home = random_private_cell();
      for (int k = 0; k < size && id < n; ++k, ++id) {
        auto& a = agents_[static_cast<std::size_t>(id)];
        a.id = id;
        a.home = home;
      }
    }
    for (auto& a : agents_) a.work = workplaces[uniform_index(workplaces.size())];

    // Exactly round(p * N) adopters, chosen by a full shuffle so the stream
    // consumed does not depend on p.
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[uniform_index(i + 1)]);
    const int adopters = static_cast<int>(std::llround(cfg_.adoption * n));
    for (int k = 0; k < adopters; ++k) agents_[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].has_app = true;

    for (auto& a : agents_) {
      SeedSecret secret{};
      for (std::size_t b = 0; b < secret.size(); b += 8) {
        const std::uint64_t word = crypto_rng_();
        std::memcpy(secret.data() + b, &word, 8);
      }
      const std::uint64_t pds_seed = crypto_rng_();
      if (!a.has_app) continue;
      a.seed = DailySeed(0, secret);
      a.pds = std::make_unique<PersonalDataStore>(pds_seed);
      a.pds->grant_consent(Purpose::ContactUpload);
      a.pds->grant_consent(Purpose::LocationUpload);
    }

    // Index cases start infectious at epoch 0.
    std::vector<int> pool = order;
    for (int k = 0; k < cfg_.index_cases; ++k) {
      const auto pick = static_cast<std::size_t>(k) + uniform_index(static_cast<std::uint64_t>(n - k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick]);
      auto& a = agents_[static_cast<std::size_t>(pool[static_cast<std::size_t>(k)])];
      a.generation = 0;
      infected_day_[static_cast<std::size_t>(a.id)] = 0;
      enter_infectious(a, 0);
    }
  }

  void enter_infectious(Agent& a, std::int64_t e) {
    a.disease = HealthState::I;
    a.state_since = e;
    a.infectious_since = e;
    a.transition_at = e + draw_duration(cfg_.infectious_mean_days);
    a.test_at = e + static_cast<std::int64_t>(
                        std::llround((cfg_.presymptomatic_days + cfg_.test_delay_days) * kEpochsPerDay));
  }

  void infect(Agent& target, int source, Channel channel, const CellId& cell, std::int64_t e, EpochEvents& events) {
    target.disease = HealthState::E;
    target.state_since = e;
    target.transition_at = e + draw_duration(cfg_.exposed_mean_days);
    target.generation = source >= 0 ? agents_[static_cast<std::size_t>(source)].generation + 1 : 1;
    infected_day_[static_cast<std::size_t>(target.id)] = static_cast<int>(e / kEpochsPerDay);
    events.infections.push_back(InfectionEvent{e, target.id, source, channel, cell, target.generation});
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch=%lld day=%lld INFECT channel=%s source=%d infectee=%d cell=%lld:%lld gen=%d",
                  static_cast<long long>(e), static_cast<long long>(e / kEpochsPerDay), channel_name(channel), source,
                  target.id, static_cast<long long>(cell.x), static_cast<long long>(cell.y), target.generation);
    log_.emplace_back(buf);
  }

  void start_day(std::int64_t day) {
    for (auto& a : agents_) {
      if (!a.has_app) continue;
      if (day > 0) a.seed = derive_next_seed(a.seed);
      a.recent_seeds.push_back(a.seed);
      while (static_cast<std::int64_t>(a.recent_seeds.size()) > kRetentionDays) a.recent_seeds.pop_front();
      a.ids_ready.reset();
      a.pds->contacts().prune(day);
      a.pds->prune_locations((day - kRetentionDays + 1) * kSecondsPerDay);
    }
    board_.prune(day);
    location_store_.close_upload_window();

    // Errands are drawn for everybody so the stream does not depend on who
    // is quarantined.
    const int window = kEpochsPerDay - kErrandWindowStart - cfg_.errand_epochs;
    for (auto& a : agents_) {
      if (cfg_.shared_space_cells.empty()) break;
      errand_cell_[static_cast<std::size_t>(a.id)] = cfg_.shared_space_cells[uniform_index(cfg_.shared_space_cells.size())];
      errand_start_[static_cast<std::size_t>(a.id)] =
          kErrandWindowStart + static_cast<int>(uniform_index(static_cast<std::uint64_t>(std::min(window, kErrandSlots))));
    }
  }

  // Day plan: home until 08:00, work until 17:00, then one errand to a shared
  // space at a drawn start, otherwise home.
  static constexpr int kWorkStart = 32;
  static constexpr int kWorkEnd = 68;
  static constexpr int kErrandWindowStart = 68;
  static constexpr int kErrandSlots = 16;

  void move(std::int64_t e, int slot) {
    for (auto& a : agents_) {
      const auto i = static_cast<std::size_t>(a.id);
      CellId where = a.home;
      if (!a.quarantined(e)) {
        if (slot >= kWorkStart && slot < kWorkEnd) {
          where = a.work;
        } else if (errand_start_[i] >= 0 && slot >= errand_start_[i] && slot < errand_start_[i] + cfg_.errand_epochs) {
          where = errand_cell_[i];
        }
      }
      position_[i] = where;
      if (a.has_app && !a.pds->tracking_stopped()) {
        a.pds->append_location(world_cell_center(where, e * kEpochMinutes * 60));
      }
    }
    // Buckets of free (non-quarantined) agents per cell, ascending ids.
    if (buckets_.size() != world_.contamination.size()) buckets_.assign(world_.contamination.size(), {});
    for (auto c : occupied_) buckets_[c].clear();
    occupied_.clear();
    for (const auto& a : agents_) {
      if (a.quarantined(e)) continue;
      const auto c = cell_index(position_[static_cast<std::size_t>(a.id)]);
      if (buckets_[c].empty()) occupied_.push_back(c);
      buckets_[c].push_back(a.id);
    }
    std::sort(occupied_.begin(), occupied_.end());
  }

  CellId cell_of_index(std::size_t c) const {
    return CellId{static_cast<std::int64_t>(c % cfg_.width), static_cast<std::int64_t>(c / cfg_.width)};
  }

  void contact_transmission(std::int64_t e, EpochEvents& events) {
    if (cfg_.beta_contact <= 0.0) return;
    for (auto c : occupied_) {
      const auto& here = buckets_[c];
      if (here.size() < 2) continue;
      for (int src : here) {
        if (agents_[static_cast<std::size_t>(src)].disease != HealthState::I) continue;
        for (int dst : here) {
          auto& target = agents_[static_cast<std::size_t>(dst)];
          if (target.disease != HealthState::S) continue;
          if (uniform() < cfg_.beta_contact) infect(target, src, Channel::Contact, cell_of_index(c), e, events);
        }
      }
    }
  }

  void fomite_transmission(std::int64_t e, EpochEvents& events) {
    for (auto c : occupied_) {
      if (!is_shared_.contains(c)) continue;
      const auto& here = buckets_[c];
      for (int src : here) {
        if (agents_[static_cast<std::size_t>(src)].disease != HealthState::I) continue;
        if (cfg_.deposit_rate <= 0.0) continue;
        world_.contamination[c] += cfg_.deposit_rate;
        auto& mine = world_.deposits[c];
        auto it = std::find_if(mine.begin(), mine.end(), [src](const auto& d) { return d.first == src; });
        if (it == mine.end()) mine.emplace_back(src, cfg_.deposit_rate);
        else it->second += cfg_.deposit_rate;
      }
      if (cfg_.beta_fomite <= 0.0) continue;
      const double p = std::min(1.0, cfg_.beta_fomite * world_.contamination[c]);
      if (p <= 0.0) continue;
      for (int dst : here) {
        auto& target = agents_[static_cast<std::size_t>(dst)];
        if (target.disease != HealthState::S) continue;
        if (uniform() < p) infect(target, fomite_source(c), Channel::Fomite, cell_of_index(c), e, events);
      }
    }
  }

  // The infector of a surface pickup is drawn in proportion to each
  // depositor's remaining load.
  int fomite_source(std::size_t c) {
    const auto& loads = world_.deposits[c];
    double total = 0.0;
    for (const auto& d : loads) total += d.second;
    double u = uniform() * total;
    for (const auto& d : loads) {
      if (u < d.second) return d.first;
      u -= d.second;
    }
    return loads.back().first;
  }

  void decay() {
    for (auto c : is_shared_) {
      world_.contamination[c] *= decay_factor_;
      auto& loads = world_.deposits[c];
      for (auto& d : loads) d.second *= decay_factor_;
      std::erase_if(loads, [](const auto& d) { return d.second < kNegligibleLoad; });
      if (loads.empty()) world_.contamination[c] = 0.0;
    }
  }

  static constexpr double kNegligibleLoad = 1e-9;

  void log_encounters(std::int64_t day, int slot) {
    const int n = cfg_.agents;
    for (auto c : occupied_) {
      const auto& here = buckets_[c];
      if (here.size() < 2) continue;
      for (std::size_t x = 0; x < here.size(); ++x) {
        for (std::size_t y = x + 1; y < here.size(); ++y) {
          const int a = here[x];
          const int b = here[y];
          const std::size_t key = static_cast<std::size_t>(a) * n + b;
          auto& A = agents_[static_cast<std::size_t>(a)];
          auto& B = agents_[static_cast<std::size_t>(b)];
          if (!pair_seen_[key]) {
            pair_seen_[key] = true;
            ++contact_pairs_;
            if (A.has_app && B.has_app) ++detectable_pairs_;
          }
          if (!(A.has_app && B.has_app)) continue;
          const auto& id_a = broadcast_id(A, day, slot);
          const auto& id_b = broadcast_id(B, day, slot);
          A.pds->contacts().record_encounter(EncounterRecord(id_b, day, slot, kEncounterMinutes, kEncounterAttenuation));
          B.pds->contacts().record_encounter(EncounterRecord(id_a, day, slot, kEncounterMinutes, kEncounterAttenuation));
          last_met_day_[key] = static_cast<std::int32_t>(day);
          last_met_day_[static_cast<std::size_t>(b) * n + a] = static_cast<std::int32_t>(day);
        }
      }
    }
  }

  // Only identifiers somebody hears are derived; the values equal
  // expand_epoch_ids(seed).ids[slot].
  const EphemeralId& broadcast_id(Agent& a, std::int64_t day, int slot) {
    const auto j = static_cast<std::size_t>(slot);
    if (!a.ids_ready[j]) {
      a.ids_today[j] = detail::epoch_id_with(id_hasher_, a.seed.secret, slot);
      a.ids_ready.set(j);
      if (observer_) observer_->on_broadcast(a.id, day, slot, a.ids_today[j]);
    }
    return a.ids_today[j];
  }

  static constexpr int kEncounterMinutes = 15;
  static constexpr int kEncounterAttenuation = 30;

  void progress(std::int64_t e) {
    for (auto& a : agents_) {
      if (a.transition_at > e) continue;
      if (a.disease == HealthState::E) {
        enter_infectious(a, e);
      } else if (a.disease == HealthState::I) {
        a.disease = HealthState::R;
        a.state_since = e;
        a.transition_at = std::numeric_limits<std::int64_t>::max();
        a.isolated = false;
      }
    }
  }

  void run_tests(std::int64_t e, EpochEvents& events) {
    for (auto& a : agents_) {
      if (a.disease != HealthState::I || !a.test_at || *a.test_at != e) continue;
      on_positive_test(a, e, events);
    }
  }

  /// The positive agent isolates; with the app, contact and location
  /// channels fire independently of each other.
  void on_positive_test(Agent& a, std::int64_t e, EpochEvents& events) {
    a.isolated = true;
    ++tests_;
    TestEvent test{e, a.id, false, false};
    const std::int64_t day = e / kEpochsPerDay;

    if (a.has_app && cfg_.intervention != Intervention::None) {
      std::vector<DailySeed> seeds(a.recent_seeds.begin(), a.recent_seeds.end());
      ExposureReport report = report_from_seeds(seeds);
      board_.publish_report(report);
      ++reports_;
      ++day_reports_;
      test.report_published = true;
      if (observer_) observer_->on_report(a.id, report);
      notify_contacts(a, report, e, day, events);
    }

    if (a.has_app && cfg_.intervention == Intervention::ContactTracingLocation &&
        a.pds->has_consent(Purpose::LocationUpload)) {
      const auto g = *minimum_granularity(Purpose::LocationUpload);
      auto [payload, consent] = a.pds->build_share_payload(Purpose::LocationUpload, g,
                                                           DayRange{std::max<std::int64_t>(0, day - kRetentionDays + 1), day},
                                                           e * kEpochMinutes * 60);
      location_store_.ingest_location_payload(payload);
      ++payloads_;
      test.location_uploaded = true;
      if (observer_) observer_->on_location_payload(a.id, payload);
    }

    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch=%lld day=%lld TEST agent=%d report=%d location=%d",
                  static_cast<long long>(e), static_cast<long long>(day), a.id, test.report_published ? 1 : 0,
                  test.location_uploaded ? 1 : 0);
    log_.emplace_back(buf);
    events.tests.push_back(test);
  }

  /// Every app user checks the new report against their own store. Agents
  /// that never shared a cell with the reporter inside the retention window
  /// cannot hold any of the reporter's identifiers, so they are skipped.
  void notify_contacts(const Agent& reporter, const ExposureReport& report, std::int64_t e, std::int64_t day,
                       EpochEvents& events) {
    const ReportMatcher matcher(report);
    const int n = cfg_.agents;
    for (auto& b : agents_) {
      if (b.id == reporter.id || !b.has_app) continue;
      if (last_met_day_[static_cast<std::size_t>(reporter.id) * n + b.id] <= day - kRetentionDays) continue;
      auto exposures = matcher.match(b.pds->contacts());
      if (exposures.empty()) continue;
      NotificationEvent note{e, b.id, reporter.id, std::move(exposures)};
      if (observer_) observer_->on_notification(note, b.pds->contacts(), report);
      b.notified_by.emplace_back(reporter.id, e);
      if (!b.isolated) {
        b.quarantine_until = std::max(b.quarantine_until, e + static_cast<std::int64_t>(cfg_.quarantine_days) * kEpochsPerDay);
      }
      ++notifications_;
      ++day_notifications_;
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch=%lld day=%lld NOTIFY agent=%d reporter=%d", static_cast<long long>(e),
                    static_cast<long long>(day), b.id, reporter.id);
      log_.emplace_back(buf);
      events.notifications.push_back(std::move(note));
    }
  }

  bool was_traced(const InfectionEvent& inf) const {
    const auto& target = agents_[static_cast<std::size_t>(inf.infectee)];
    for (const auto& [reporter, when] : target.notified_by) {
      if (reporter != inf.source) continue;
      if (!target.infectious_since || when < *target.infectious_since) return true;
    }
    return false;
  }

  void close_day(std::int64_t day) {
    DailyRow row;
    row.day = static_cast<int>(day);
    const std::int64_t e = day * kEpochsPerDay + kEpochsPerDay - 1;
    for (const auto& a : agents_) {
      switch (a.state(e)) {
        case HealthState::S: ++row.s; break;
        case HealthState::E: ++row.e; break;
        case HealthState::I: ++row.i; break;
        case HealthState::R: ++row.r; break;
        case HealthState::Q: ++row.q; break;
      }
    }
    cumulative_ += day_new_infections_;
    row.new_infections = day_new_infections_;
    row.cumulative_infected = cumulative_ + cfg_.index_cases;
    row.reports = day_reports_;
    row.notifications = day_notifications_;
    daily_.push_back(row);
    day_new_infections_ = 0;
    day_reports_ = 0;
    day_notifications_ = 0;
  }

  /// Density map over every cell with uploads and fixed-width bins covering
  /// the horizon; hotspot cells are translated back to world coordinates in
  /// metrics().
  void build_hotspots() {
    const std::int64_t bin_seconds = static_cast<std::int64_t>(cfg_.hotspot_bin_days) * kSecondsPerDay;
    std::vector<std::int64_t> bins;
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(cfg_.horizon_days) * kSecondsPerDay; t += bin_seconds) {
      bins.push_back(t);
    }
    CellIndexSpace space(location_store_.cells(), bins, bin_seconds);
    density_ = build_density_map(location_store_, space);
    hotspots_ = detect_hotspots(*density_);
  }

 public:
  const std::optional<DensityMap>& density_map() const { return density_; }

 private:
  ScenarioConfig cfg_;
  SimObserver* observer_;
  std::mt19937_64 rng_;
  Sha256 id_hasher_;
  std::mt19937_64 crypto_rng_;
  WorldState world_;
  std::vector<Agent> agents_;
  std::vector<int> infected_day_;
  std::vector<CellId> position_;
  std::vector<CellId> errand_cell_;
  std::vector<int> errand_start_;
  std::vector<std::int32_t> last_met_day_;
  std::vector<bool> pair_seen_;
  std::set<std::size_t> is_shared_;
  std::vector<std::vector<int>> buckets_;
  std::vector<std::size_t> occupied_;
  double decay_factor_ = 1.0;

  ExposureBoard board_;
  LocationStore location_store_;
  std::optional<DensityMap> density_;
  std::vector<Hotspot> hotspots_;

  std::vector<InfectionEvent> infections_;
  std::vector<DailyRow> daily_;
  std::vector<std::string> log_;
  std::uint64_t quarantine_epochs_ = 0;
  std::uint64_t contact_pairs_ = 0;
  std::uint64_t detectable_pairs_ = 0;
  int tests_ = 0, reports_ = 0, payloads_ = 0, notifications_ = 0;
  int day_new_infections_ = 0, day_reports_ = 0, day_notifications_ = 0;
  int cumulative_ = 0;
  bool finalized_ = false;
};

/// One complete run.
inline SimMetrics run_scenario(const ScenarioConfig& cfg, SimObserver* observer = nullptr) {
  Simulator sim(cfg, observer);
  sim.run();
  return sim.metrics();
}

}  // namespace epitrace
