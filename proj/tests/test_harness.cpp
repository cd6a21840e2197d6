#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "kvmon/harness.hpp"
#include "scenarios.hpp"

using namespace kvmon;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string csv_of(const MetricsRecord& r) {
  std::ostringstream out;
  write_csv(out, r);
  return out.str();
}

ExperimentConfig small_coloring() {
  ExperimentConfig c;
  c.name = "small";
  c.duration = 5 * kMicrosPerSecond;
  c.regions = 1;
  c.intra_rtt = kMicrosPerMilli;
  c.cross_rtt = {kMicrosPerMilli};
  c.quorum = QuorumConfig{3, 1, 1};
  c.workload = WorkloadKind::Coloring;
  c.clients = 3;
  c.graph = GraphKind::Grid;
  c.nodes = 36;
  c.graph_app.strategy.kind = StrategyKind::Backoff;
  c.graph_app.lock.poll_interval = c.intra_rtt;
  return c;
}

MetricsRecord constant_record(std::size_t windows, std::uint64_t server, std::uint64_t app) {
  MetricsRecord r;
  for (std::size_t i = 0; i < windows; ++i) {
    auto& b = r.at(static_cast<Timestamp>(i) * kMicrosPerSecond);
    b.server_ops = server;
    b.app_ops = app;
  }
  r.end_time = static_cast<Timestamp>(windows) * kMicrosPerSecond;
  return r;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse(R"(
[run]
name = demo
duration_s = 12.5
trials = 3
seed = 9
[store]
servers = 5
quorum = N5R1W1
completion = all
[network]
regions = 3
intra_rtt_ms = 0.5
cross_rtt_ms = 76, 163, 103
[monitors]
enabled = false
[workload]
kind = weather
clients = 6
graph = grid
nodes = 100
put_ratio = 0.25
[livelock]
strategy = backoff
max_delay_ms = 20
)");
  CHECK(c.name == "demo");
  CHECK(c.duration == 12'500'000);
  CHECK(c.trials == 3);
  CHECK(c.seed == 9);
  CHECK(c.servers == 5);
  CHECK(c.quorum.name() == "N5R1W1");
  CHECK(c.completion == Completion::AllOrTimeout);
  CHECK(c.intra_rtt == 500);
  REQUIRE(c.cross_rtt.size() == 3);
  CHECK(c.rtt(0, 1) == 76'000);
  CHECK(c.rtt(0, 2) == 163'000);
  CHECK(c.rtt(2, 1) == 103'000);
  CHECK(c.rtt(1, 1) == 500);
  CHECK_FALSE(c.monitors);
  CHECK(c.workload == WorkloadKind::Weather);
  CHECK(c.graph == GraphKind::Grid);
  CHECK(c.graph_app.put_ratio == 0.25);
  CHECK(c.graph_app.strategy.kind == StrategyKind::Backoff);
  CHECK(c.graph_app.strategy.max_delay == 20'000);
  // Polling defaults to the intra-region RTT.
  CHECK(c.graph_app.lock.poll_interval == 500);

  CHECK_THROWS_AS(parse("[workload]\nkind = sorting\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[livelock]\nstrategy = pray\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[store]\nreplicas = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[extra]\nx = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[store]\nservers = 3\nquorum = N5R1W1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[network]\nregions = 3\ncross_rtt_ms = 1, 2\n"), std::invalid_argument);
}

TEST_CASE("identical seeds give identical csv bytes") {
  const ExperimentConfig cfg = small_coloring();
  const MetricsRecord a = run_trial(cfg, 4);
  const MetricsRecord b = run_trial(cfg, 4);
  CHECK(csv_of(a) == csv_of(b));
  CHECK(a.scheduler_hash == b.scheduler_hash);
  const MetricsRecord c = run_trial(cfg, 5);
  CHECK(a.scheduler_hash != c.scheduler_hash);
}

TEST_CASE("monitors off send no candidates") {
  ExperimentConfig cfg = small_coloring();
  cfg.monitors = false;
  const MetricsRecord r = run_trial(cfg, 1);
  CHECK(r.candidate_messages == 0);
  CHECK(r.detections.empty());
  for (const auto& b : r.buckets) CHECK(b.candidates == 0);
  CHECK(r.total_progress() > 0);
}

TEST_CASE("monitors do not change the application run") {
  // Candidates travel on their own links and nothing waits on them, so the
  // client side is identical until a report triggers a rollback.
  ExperimentConfig cfg;
  cfg.duration = 3 * kMicrosPerSecond;
  cfg.workload = WorkloadKind::Kv;
  cfg.kv.put_ratio = 0.5;
  cfg.regions = 1;
  cfg.intra_rtt = kMicrosPerMilli;
  cfg.cross_rtt = {kMicrosPerMilli};
  const MetricsRecord on = run_trial(cfg, 2);
  cfg.monitors = false;
  const MetricsRecord off = run_trial(cfg, 2);
  REQUIRE(on.buckets.size() == off.buckets.size());
  for (std::size_t i = 0; i < on.buckets.size(); ++i) {
    CHECK(on.buckets[i].app_ops == off.buckets[i].app_ops);
    CHECK(on.buckets[i].server_ops >= on.buckets[i].app_ops);
  }
}

TEST_CASE("three trials write three trial csvs and one average") {
  ExperimentConfig cfg = small_coloring();
  cfg.trials = 3;
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() == 3);
  CHECK(records[0].seed == cfg.seed);
  CHECK(records[2].seed == cfg.seed + 2);

  const auto dir = std::filesystem::temp_directory_path() / "kvmon_harness_test";
  std::filesystem::remove_all(dir);
  const auto files = write_outputs(dir.string(), cfg, records);
  std::size_t csvs = 0;
  for (const auto& f : files) csvs += std::filesystem::path(f).extension() == ".csv";
  CHECK(csvs == 4);
  CHECK(std::filesystem::exists(dir / "small_avg.csv"));
  CHECK(std::filesystem::exists(dir / "small_trial3.csv"));
  CHECK(std::filesystem::exists(dir / "small_trial2_events.jsonl"));

  std::ifstream in(dir / "small_trial1.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == kCsvHeader);

  std::ifstream avg_in(dir / "small_avg.csv");
  const auto avg = read_csv(avg_in);
  const auto expect = average_records(records);
  REQUIRE(avg.size() == expect.size());
  for (std::size_t i = 0; i < avg.size(); ++i) {
    CHECK(avg[i].app_ops == doctest::Approx(expect[i].app_ops).epsilon(1e-3));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("serial and parallel trials agree") {
  ExperimentConfig cfg = small_coloring();
  cfg.trials = 3;
  const auto serial = run_trials_serial(cfg);
  const auto parallel = run_trials_parallel(cfg);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(csv_of(serial[i]) == csv_of(parallel[i]));
    CHECK(serial[i].scheduler_hash == parallel[i].scheduler_hash);
  }
}

TEST_CASE("stable phase metrics") {
  const MetricsRecord r = constant_record(10, 300, 100);
  const StableSummary s = stable_phase_metrics(r, 0.2);
  CHECK(s.windows == 8);
  CHECK(s.server_ops_per_s == doctest::Approx(300));
  CHECK(s.app_ops_per_s == doctest::Approx(100));

  // A partial last window is not averaged.
  MetricsRecord cut = constant_record(10, 300, 100);
  cut.at(10 * kMicrosPerSecond).app_ops = 5;
  cut.end_time = 10 * kMicrosPerSecond + 400'000;
  CHECK(stable_phase_metrics(cut, 0.2).app_ops_per_s == doctest::Approx(100));

  CHECK_THROWS_AS(stable_phase_metrics(constant_record(1, 1, 1), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(stable_phase_metrics(MetricsRecord{}, 0.2), std::invalid_argument);
}

TEST_CASE("detection latency summary") {
  MetricsRecord r = constant_record(5, 1, 1);
  for (int i = 1; i <= 100; ++i) {
    r.detections.push_back({"p", 0, i * kMicrosPerMilli, 0});
  }
  const StableSummary s = stable_phase_metrics(r, 0.2);
  CHECK(s.latency_p50_ms == doctest::Approx(50));
  CHECK(s.latency_p99_ms == doctest::Approx(99));
  CHECK(s.latency_max_ms == doctest::Approx(100));
  CHECK(detection_share_within(r, 50 * kMicrosPerMilli) == doctest::Approx(0.49));
}

TEST_CASE("overhead and benefit") {
  CHECK(overhead(649, 628) == doctest::Approx(0.032).epsilon(0.01));
  CHECK(benefit(454, 313) == doctest::Approx(0.45).epsilon(0.01));
  CHECK(overhead(100, 100) == 0.0);
  CHECK_THROWS_AS(overhead(0, 1), std::invalid_argument);
  CHECK_THROWS_AS(benefit(1, 0), std::invalid_argument);
}

TEST_CASE("progress timeline") {
  MetricsRecord r;
  r.at(0).progress = 5;
  r.at(2 * kMicrosPerSecond).progress = 5;
  r.at(3 * kMicrosPerSecond).progress = 10;
  CHECK(r.total_progress() == 20);
  // Reported at the end of the window that reached the target.
  CHECK(r.time_to_progress(5) == kMicrosPerSecond);
  CHECK(r.time_to_progress(6) == 3 * kMicrosPerSecond);
  CHECK(r.time_to_progress(20) == 4 * kMicrosPerSecond);
  CHECK_FALSE(r.time_to_progress(21));
}
