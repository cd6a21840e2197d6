#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kvmon/detection.hpp"
#include "kvmon/graph.hpp"
#include "kvmon/kvstore.hpp"
#include "kvmon/metrics.hpp"
#include "kvmon/predicates.hpp"
#include "kvmon/rollback.hpp"
#include "kvmon/simnet.hpp"
#include "kvmon/workloads.hpp"

namespace kvmon {

enum class WorkloadKind { Coloring, Weather, Conjunctive, Kv };

WorkloadKind parse_workload_kind(std::string_view name);
std::string_view workload_kind_name(WorkloadKind k);

struct ExperimentConfig {
  std::string name = "run";
  Timestamp duration = 60 * kMicrosPerSecond;
  int trials = 1;
  std::uint64_t seed = 1;
  bool parallel = false;
  double warmup = 0.2;
  /// Terminating workloads end the trial once every client is done.
  bool stop_when_done = true;

  // Store.
  std::size_t servers = 3;
  QuorumConfig quorum{3, 1, 1};
  Completion completion = Completion::Quorum;
  ServiceTimes service;
  Timestamp epsilon = kInfiniteEpsilon;

  // Network. Regions hold servers round-robin and clients round-robin.
  std::size_t regions = 3;
  Timestamp intra_rtt = 2 * kMicrosPerMilli;
  /// Upper triangle (0,1), (0,2), ..., (1,2), ...; one value applies to all pairs.
  std::vector<Timestamp> cross_rtt{100 * kMicrosPerMilli};
  /// Share of each one-way latency drawn from Gamma(2, .) jitter.
  double jitter = 0.2;

  // Monitors.
  bool monitors = true;
  std::size_t monitor_count = 0;  // 0: one per server
  /// Region of every monitor; unset places monitor i next to server i.
  std::optional<RegionId> monitor_region;
  Timestamp gc_period = 10 * kMicrosPerSecond;
  Timestamp idle_timeout = 60 * kMicrosPerSecond;
  std::size_t queue_limit = 1024;

  // Workload.
  WorkloadKind workload = WorkloadKind::Kv;
  std::size_t clients = 3;
  GraphKind graph = GraphKind::Regular;
  std::size_t nodes = 500;
  std::uint64_t graph_seed = 1;
  GraphParams graph_params;
  std::string edge_file;
  std::string owner_file;
  GraphAppOptions graph_app;
  ConjunctiveOptions conjunctive;
  KvOptions kv;

  void validate() const;
  LatencyModel latency_model() const;
  /// Mean round-trip time between two regions.
  Timestamp rtt(RegionId a, RegionId b) const;
};

/// Parses the INI form documented in the README. Unknown keys are rejected.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

struct DetectionEvent {
  std::string predicate;
  Timestamp t_violate = 0;
  Timestamp detection_time = 0;
  std::size_t monitor = 0;
};

struct RunEvent {
  enum class Kind { Violation, Abort, Switch } kind;
  Timestamp time = 0;
  std::string what;
  std::size_t client = 0;
  std::size_t task = 0;
};

/// Per-second counters of one trial.
struct MetricsRecord {
  struct Bucket {
    std::uint64_t server_ops = 0;
    std::uint64_t app_ops = 0;
    std::uint64_t violations = 0;
    std::uint64_t detections = 0;
    std::uint64_t aborts = 0;
    std::uint64_t candidates = 0;
    std::uint64_t progress = 0;
  };
  std::vector<Bucket> buckets;
  std::vector<DetectionEvent> detections;
  std::vector<RunEvent> events;
  std::uint64_t seed = 0;
  Timestamp end_time = 0;
  /// Time the last terminating client finished; unset if the run was cut.
  std::optional<Timestamp> completion_time;
  bool proper_coloring = false;
  std::uint64_t co_occupancy = 0;
  std::size_t graph_nodes = 0;
  std::uint64_t aborts = 0;
  std::uint64_t writes_in_aborted = 0;
  std::uint64_t switched_clients = 0;
  std::uint64_t candidate_messages = 0;
  std::uint64_t server_messages = 0;
  std::uint64_t scheduler_hash = 0;

  Bucket& at(Timestamp t);
  std::uint64_t total_progress() const;
  /// First time cumulative node progress reached `target`.
  std::optional<Timestamp> time_to_progress(std::uint64_t target) const;
};

/// Collects sink callbacks into a MetricsRecord.
class RecordingMetrics : public MetricsSink {
 public:
  explicit RecordingMetrics(MetricsRecord& r) : r_(r) {}
  void server_op(Timestamp t) override { ++r_.at(t).server_ops; }
  void app_op(Timestamp t) override { ++r_.at(t).app_ops; }
  void candidate(Timestamp t) override { ++r_.at(t).candidates; }
  void detection(const ViolationReport& rep) override;
  void violation(Timestamp t, const std::string& what) override;
  void abort(Timestamp t, std::size_t client, std::size_t task) override;
  void consistency_switch(Timestamp t, std::size_t client) override;
  void progress(Timestamp t, std::size_t nodes) override { r_.at(t).progress += nodes; }

 private:
  MetricsRecord& r_;
};

/// One assembled simulated deployment.
class Simulation {
 public:
  Simulation(const ExperimentConfig& cfg, std::uint64_t seed, MetricsSink& metrics);
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  /// Runs until the configured duration or, if enabled, until every
  /// terminating client finished. Returns the stop time.
  Timestamp run();
  bool all_finished() const;
  std::optional<Timestamp> completion_time() const { return completion_; }

  Scheduler& scheduler() { return sched_; }
  Network& network() { return *net_; }
  const ExperimentConfig& config() const { return cfg_; }
  const WorkGraph* graph() const { return graph_.get(); }
  PredicateRegistry& registry() { return *registry_; }
  const std::vector<std::unique_ptr<KvServer>>& servers() const { return servers_; }
  const std::vector<std::unique_ptr<KvClient>>& kv_clients() const { return kv_clients_; }
  const std::vector<std::unique_ptr<AppClient>>& apps() const { return apps_; }
  const std::vector<std::unique_ptr<Monitor>>& monitors() const { return monitors_; }
  const CsTracker& cs() const { return *cs_; }

  /// Every edge has two distinct single-valued colors across all replicas.
  bool proper_coloring() const;
  /// Fills the trial-level fields of `r`.
  void summarize(MetricsRecord& r) const;

 private:
  void schedule_gc();

  ExperimentConfig cfg_;
  MetricsSink& metrics_;
  Scheduler sched_;
  std::unique_ptr<Network> net_;
  std::unique_ptr<WorkGraph> graph_;
  std::unique_ptr<PredicateRegistry> registry_;
  std::unique_ptr<Placement> placement_;
  std::vector<std::unique_ptr<KvServer>> servers_;
  std::vector<std::unique_ptr<Monitor>> monitors_;
  std::vector<std::unique_ptr<LocalDetector>> detectors_;
  std::vector<std::unique_ptr<KvClient>> kv_clients_;
  std::unique_ptr<CsTracker> cs_;
  std::vector<std::unique_ptr<AppClient>> apps_;
  std::optional<Timestamp> completion_;
};

/// Runs one seeded trial.
MetricsRecord run_trial(const ExperimentConfig& cfg, std::uint64_t seed);

/// Runs cfg.trials trials (seed, seed+1, ...), serially or in parallel.
std::vector<MetricsRecord> run_experiment(const ExperimentConfig& cfg);

/// Serial reference and OpenMP version of the same trial loop.
std::vector<MetricsRecord> run_trials_serial(const ExperimentConfig& cfg);
std::vector<MetricsRecord> run_trials_parallel(const ExperimentConfig& cfg);

struct StableSummary {
  double server_ops_per_s = 0;
  double app_ops_per_s = 0;
  double candidates_per_s = 0;
  double progress_per_s = 0;
  std::size_t windows = 0;
  std::size_t detections = 0;
  /// Detection latency (detection_time - t_violate) percentiles in ms.
  double latency_p50_ms = 0;
  double latency_p99_ms = 0;
  double latency_max_ms = 0;
};

/// Drops the first `warmup` share of windows and averages the rest.
/// Throws if nothing is left.
StableSummary stable_phase_metrics(const MetricsRecord& r, double warmup);

/// Share of detections whose latency is below `budget`.
double detection_share_within(const MetricsRecord& r, Timestamp budget);

double overhead(double base, double monitored);
double benefit(double eventual, double sequential);

/// Per-window mean of the trials; shorter records count as zero.
struct AverageBucket {
  double server_ops = 0, app_ops = 0, violations = 0, detections = 0, aborts = 0, candidates = 0;
};
std::vector<AverageBucket> average_records(const std::vector<MetricsRecord>& records);

inline constexpr const char* kCsvHeader =
    "time_s,server_ops,app_ops,violations,detections,aborts,candidates";

void write_csv(std::ostream& out, const MetricsRecord& r);
void write_average_csv(std::ostream& out, const std::vector<AverageBucket>& avg);
/// One JSON object per line: detections, violations, aborts, switches, trial summary.
void write_events(std::ostream& out, const MetricsRecord& r);

/// Writes <dir>/<name>_trial<k>.csv and <name>_trial<k>_events.jsonl per trial, then <name>_avg.csv.
std::vector<std::string> write_outputs(const std::string& dir, const ExperimentConfig& cfg,
                                       const std::vector<MetricsRecord>& records);

/// Loads a per-window CSV (trial or average) as doubles.
std::vector<AverageBucket> read_csv(std::istream& in);

}  // namespace kvmon
