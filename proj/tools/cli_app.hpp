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

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "epitrace/authority.hpp"
#include "epitrace/contact_store.hpp"
#include "epitrace/crypto_ids.hpp"
#include "epitrace/epi_sim.hpp"
#include "epitrace/personal_data_store.hpp"
#include "epitrace/scenario_config.hpp"
#include "epitrace/secure_aggregation.hpp"
#include "epitrace/sweep.hpp"

namespace epitrace::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Bad arguments that CLI11 cannot catch on its own.
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace fs = std::filesystem;

inline fs::path prepare_outdir(const std::string& dir) {
  fs::path out(dir);
  fs::create_directories(out);
  if (!fs::is_directory(out)) throw Error("output path is not a directory: " + dir);
  return out;
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

struct CommonOptions {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

inline ScenarioConfig load_scenario(const CommonOptions& opts) {
  ScenarioConfig cfg = opts.config.empty() ? ScenarioConfig{} : ScenarioConfig::load(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.mode) cfg.intervention = intervention_from_name(*opts.mode);
  cfg.validate();
  return cfg;
}

inline int cmd_simulate(const CommonOptions& opts, std::ostream& out) {
  const ScenarioConfig cfg = load_scenario(opts);
  const fs::path dir = prepare_outdir(opts.out);
  Simulator sim(cfg);
  sim.run();
  const SimMetrics m = sim.metrics();
  {
    auto os = open_output(dir / "metrics.csv");
    sim.write_metrics_csv(os);
  }
  {
    auto os = open_output(dir / "hotspots.json");
    os << sim.hotspots_json().dump(2) << '\n';
  }
  {
    auto os = open_output(dir / "events.log");
    sim.write_event_log(os);
  }
  {
    nlohmann::json summary;
    summary["config"] = cfg.to_json();
    summary["metrics"] = m.to_json();
    auto os = open_output(dir / "summary.json");
    os << summary.dump(2) << '\n';
  }
  out << "attack_rate " << std::fixed << std::setprecision(4) << m.attack_rate << "\n";
  out << "r_eff_by_generation";
  for (double r : m.r_eff_by_generation) out << ' ' << std::setprecision(3) << r;
  out << "\ntraced_fraction " << std::setprecision(4) << m.traced_fraction << "\nhotspot_recall "
      << m.hotspot_recall << "\nwrote " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_sweep(const CommonOptions& opts, unsigned threads, std::ostream& out) {
  if (opts.config.empty()) throw UsageError("sweep needs --config");
  std::ifstream in(opts.config);
  if (!in) throw ConfigError("<file>", "cannot open " + opts.config);
  std::stringstream text;
  text << in.rdbuf();
  SweepGrid grid = SweepGrid::parse(text.str());
  if (opts.seed) grid.seeds = {*opts.seed};
  if (opts.mode) grid.base.intervention = intervention_from_name(*opts.mode);
  const fs::path dir = prepare_outdir(opts.out);
  const auto rows = run_sweep(grid, threads);
  auto os = open_output(dir / "sweep.csv");
  write_sweep_csv(os, grid, rows);
  out << rows.size() << " runs over " << grid.point_count() << " points; wrote " << (dir / "sweep.csv").string()
      << "\n";
  return kExitOk;
}

enum class Colocation { Random, Forced, Never };

inline Colocation colocation_from_name(const std::string& name) {
  if (name == "random") return Colocation::Random;
  if (name == "forced") return Colocation::Forced;
  if (name == "never") return Colocation::Never;
  throw UsageError("--colocation must be random, forced or never");
}

/// Synthesized phones for the tracing demo. User 0 tests positive.
struct DemoUser {
  std::vector<DailySeed> seeds;
  std::vector<IdSchedule> schedules;
  PersonalDataStore pds;
  explicit DemoUser(std::uint64_t pseudonym_seed) : pds(pseudonym_seed) {}
};

inline constexpr int kDemoDays = 3;

inline int cmd_trace_demo(const CommonOptions& opts, int n_users, Colocation colocation, std::ostream& out) {
  if (n_users < 2) throw UsageError("trace-demo needs --users >= 2");
  const fs::path dir = prepare_outdir(opts.out);
  std::mt19937_64 rng(opts.seed.value_or(1));

  std::vector<DemoUser> users;
  users.reserve(static_cast<std::size_t>(n_users));
  for (int u = 0; u < n_users; ++u) {
    users.emplace_back(rng());
    SeedSecret secret{};
    for (auto& b : secret) b = static_cast<std::uint8_t>(rng());
    DailySeed seed(0, secret);
    for (int d = 0; d < kDemoDays; ++d) {
      users.back().seeds.push_back(seed);
      users.back().schedules.push_back(expand_epoch_ids(seed));
      seed = derive_next_seed(seed);
    }
  }

  // Encounters are whole epochs at close range, so each one qualifies on its own.
  auto meet = [&](int a, int b, int day, int epoch) {
    const auto& ida = users[a].schedules[day].ids[epoch];
    const auto& idb = users[b].schedules[day].ids[epoch];
    users[a].pds.contacts().record_encounter(EncounterRecord(idb, day, epoch, 15, 30));
    users[b].pds.contacts().record_encounter(EncounterRecord(ida, day, epoch, 15, 30));
  };
  std::uniform_int_distribution<int> epoch_dist(0, kEpochsPerDay - 2);
  for (int a = 0; a < n_users; ++a) {
    for (int b = a + 1; b < n_users; ++b) {
      for (int day = 0; day < kDemoDays; ++day) {
        if (colocation == Colocation::Never) continue;
        if (colocation == Colocation::Forced) {
          if (day == 1) meet(a, b, day, 40);
          continue;
        }
        if (rng() % 3 == 0) meet(a, b, day, epoch_dist(rng));
      }
    }
  }

  auto csv = open_output(dir / "exposures.csv");
  csv << "mode,user,day,cumulative_min,matched_epochs\n";

  // Decentralized: the positive user's seeds go on the board; every phone matches locally.
  ExposureBoard board;
  board.publish_report(report_from_seeds(users[0].seeds));
  std::set<int> matched;
  out << "decentralized: report of " << kDemoDays << " seeds published by user 0\n";
  for (int u = 1; u < n_users; ++u) {
    for (const auto& report : board.snapshot()) {
      for (const auto& ev : check_exposure(users[u].pds.contacts(), report)) {
        matched.insert(u);
        out << "  user " << u << " exposed on day " << ev.day << " for " << ev.cumulative_min << " min\n";
        csv << "decentralized," << u << ',' << ev.day << ',' << ev.cumulative_min << ',';
        for (std::size_t k = 0; k < ev.matched_epochs.size(); ++k) csv << (k ? " " : "") << ev.matched_epochs[k];
        csv << '\n';
      }
    }
  }
  if (matched.empty()) out << "  no exposures\n";

  // Centralized: seeds are escrowed; the positive user uploads contact digests.
  SeedEscrow escrow;
  for (int u = 0; u < n_users; ++u) {
    for (const auto& s : users[u].seeds) escrow.register_seed(s, RegistrantToken{static_cast<std::uint64_t>(u)});
  }
  users[0].pds.grant_consent(Purpose::ContactUpload);
  auto [payload, consent] = users[0].pds.build_share_payload(Purpose::ContactUpload, Granularity{},
                                                             DayRange{0, kDemoDays - 1}, kDemoDays * kSecondsPerDay);
  std::set<int> notified;
  for (const auto& token : resolve_and_notify(escrow, *payload.contact_digests())) {
    if (token.value != 0) notified.insert(static_cast<int>(token.value));
  }
  out << "centralized: " << payload.contact_digests()->size() << " contact digests uploaded, notified:";
  for (int u : notified) {
    out << ' ' << u;
    csv << "centralized," << u << ",,,\n";
  }
  out << (notified.empty() ? " none\n" : "\n");
  out << "modes agree: " << (notified == matched ? "yes" : "no") << "\n";
  return notified == matched ? kExitOk : kExitRuntime;
}

inline int cmd_aggregate_demo(const CommonOptions& opts, int n, int dim, std::ostream& out) {
  if (n < 1 || static_cast<std::uint64_t>(n) > kMaxParticipants) throw UsageError("--participants must be in 1..65536");
  if (dim < 1) throw UsageError("--dim must be >= 1");
  const fs::path dir = prepare_outdir(opts.out);
  std::mt19937_64 rng(opts.seed.value_or(1));
  std::uniform_int_distribution<std::uint32_t> count(0, 999);

  std::vector<ContributionVector> inputs;
  std::vector<std::uint64_t> plain(static_cast<std::size_t>(dim), 0);
  for (int p = 0; p < n; ++p) {
    std::vector<std::uint32_t> v(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) {
      v[k] = count(rng);
      plain[k] += v[k];
    }
    inputs.emplace_back(std::move(v));
  }
  const auto sum = secure_sum(std::span<const ContributionVector>(inputs), static_cast<std::size_t>(dim), rng);

  auto csv = open_output(dir / "aggregate.csv");
  csv << "index,aggregate,plaintext\n";
  std::size_t mismatches = 0;
  for (int k = 0; k < dim; ++k) {
    csv << k << ',' << sum[k] << ',' << plain[k] << '\n';
    mismatches += sum[k] != plain[k];
  }
  const int shown = std::min(dim, 8);
  out << "index aggregate plaintext\n";
  for (int k = 0; k < shown; ++k) out << k << ' ' << sum[k] << ' ' << plain[k] << '\n';
  if (shown < dim) out << "... " << (dim - shown) << " more rows in aggregate.csv\n";
  out << (mismatches ? "MISMATCH" : "aggregate equals plaintext sum") << " (n=" << n << ", D=" << dim << ")\n";
  return mismatches ? kExitRuntime : kExitOk;
}

inline int cmd_coarsen_demo(const CommonOptions& opts, std::ostream& out) {
  const fs::path dir = prepare_outdir(opts.out);
  std::mt19937_64 rng(opts.seed.value_or(1));
  std::normal_distribution<double> step(0.0, 0.0004);

  // One day of points every five minutes, wandering around a fixed origin.
  std::vector<LocationPoint> traj;
  double lat = 43.7200, lon = 10.4000;
  for (std::int64_t t = 0; t < kSecondsPerDay; t += 300) {
    traj.emplace_back(lat, lon, t);
    lat += step(rng);
    lon += step(rng);
  }

  CellLookup municipalities;
  for (const auto& p : traj) {
    const CellId fine = grid_cell(p.lat, p.lon, SpatialLevel::Grid0p001);
    municipalities.labels[fine] = floor_div(fine.x, 20) * 1000 + floor_div(fine.y, 20);
  }
  RegionMaps maps{nullptr, &municipalities};

  auto csv = open_output(dir / "coarsened.csv");
  csv << "spatial,bin_minutes,cell_x,cell_y,bin_start,dwell_min\n";
  out << "spatial bin_minutes visits distinct_cells\n";
  for (auto level : {SpatialLevel::Grid0p001, SpatialLevel::Grid0p01, SpatialLevel::Grid0p1,
                     SpatialLevel::Municipality}) {
    for (int minutes : {15, 60, 1440}) {
      const Granularity g(level, minutes);
      const auto visits = coarsen(traj, g, maps);
      std::set<CellId> cells;
      for (const auto& v : visits) {
        cells.insert(v.cell);
        csv << spatial_name(level) << ',' << minutes << ',' << v.cell.x << ',' << v.cell.y << ',' << v.bin_start
            << ',' << v.dwell_min << '\n';
      }
      out << spatial_name(level) << ' ' << minutes << ' ' << visits.size() << ' ' << cells.size() << '\n';
    }
  }
  out << "minimum granularity: ";
  for (auto p : {Purpose::ContactUpload, Purpose::LocationUpload, Purpose::AggregateParticipation}) {
    const auto g = minimum_granularity(p);
    out << purpose_name(p) << '=' << (g ? spatial_name(g->spatial) + "/" + std::to_string(g->bin_minutes) + "min"
                                        : std::string("no-location"))
        << ' ';
  }
  out << '\n';
  return kExitOk;
}

/// Parses argv and runs one subcommand. Never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"epitrace: privacy-preserving contact tracing protocols and epidemic simulator", "epitrace"};
  app.require_subcommand(1, 1);

  CommonOptions opts;
  auto add_common = [&opts](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", opts.config, "Scenario JSON file")->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", opts.seed, "Seed override");
  };
  auto add_mode = [&opts](CLI::App* sub) {
    sub->add_option("--mode", opts.mode, "Intervention override")
        ->check(CLI::IsMember({"none", "contact", "contact+location"}));
  };

  auto* simulate = app.add_subcommand("simulate", "Run one scenario; writes metrics.csv, hotspots.json, events.log");
  add_common(simulate, true);
  add_mode(simulate);

  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  auto* sweep = app.add_subcommand("sweep", "Run a parameter grid; writes sweep.csv");
  add_common(sweep, true);
  add_mode(sweep);
  sweep->add_option("--threads", threads, "Parallel runs")->check(CLI::PositiveNumber);

  int users = 2;
  std::string colocation = "random";
  auto* trace = app.add_subcommand("trace-demo", "Proximity tracing end to end, decentralized and centralized");
  add_common(trace, false);
  trace->add_option("--users", users, "Number of phones")->capture_default_str();
  trace->add_option("--colocation", colocation, "random, forced or never")->capture_default_str();

  int participants = 3, dim = 4;
  auto* agg = app.add_subcommand("aggregate-demo", "Secure aggregation round against the plaintext sum");
  add_common(agg, false);
  agg->add_option("--participants", participants, "Participant count")->capture_default_str();
  agg->add_option("--dim", dim, "Vector dimension")->capture_default_str();

  auto* coarsen_cmd = app.add_subcommand("coarsen-demo", "Coarsen a synthetic trajectory at every granularity");
  add_common(coarsen_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(opts, out);
    if (*sweep) return cmd_sweep(opts, threads, out);
    if (*trace) return cmd_trace_demo(opts, users, colocation_from_name(colocation), out);
    if (*agg) return cmd_aggregate_demo(opts, participants, dim, out);
    if (*coarsen_cmd) return cmd_coarsen_demo(opts, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace epitrace::cli
