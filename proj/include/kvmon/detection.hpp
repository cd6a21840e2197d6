#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kvmon/hvc.hpp"
#include "kvmon/kvstore.hpp"
#include "kvmon/metrics.hpp"
#include "kvmon/predicates.hpp"
#include "kvmon/simnet.hpp"

namespace kvmon {

/// A server's report that its local part of a predicate may hold during
/// `interval`; `state` holds every version of the predicate's variables that
/// the server stored during the interval.
struct Candidate {
  std::string predicate;
  std::size_t server = 0;
  HvcInterval interval;
  std::map<std::string, VersionedValue> state;
};

struct ViolationReport {
  std::string predicate;
  std::vector<Candidate> evidence;
  Timestamp t_violate = 0;
  Timestamp detection_time = 0;
  std::size_t monitor = 0;
};

/// True iff some clause has every term matched by at least one version of the
/// variable in at least one of the states. Terms are matched independently.
bool eval_predicate(const std::vector<const Candidate*>& states, const PredicateSpec& spec);
bool pairwise_concurrent(const std::vector<const Candidate*>& states);
/// Earliest interval start over the evidence, widened by epsilon when finite.
Timestamp violation_start(const std::vector<Candidate>& evidence);

std::string encode_candidate(const Candidate& c);
Candidate decode_candidate(const std::string& wire);

/// Monitor state for linear predicates: one FIFO per participating server
/// whose front is the candidate currently held in the cut.
struct GlobalState {
  std::vector<std::size_t> servers;
  std::map<std::size_t, std::deque<Candidate>> queues;
  std::size_t queue_limit = 1024;
  std::uint64_t dropped = 0;

  explicit GlobalState(std::vector<std::size_t> participants = {}, std::size_t limit = 1024);
  void enqueue(Candidate c);
  std::vector<const Candidate*> held() const;
};

/// Drops held candidates that happened before another held candidate until
/// the cut is pairwise concurrent. Returns false if some queue ran dry.
bool make_consistent(GlobalState& gs);

/// Consumes candidates until the held cut violates the predicate (returns a
/// report and steps past the earliest-ending candidate) or input runs out.
std::optional<ViolationReport> monitor_step_linear(GlobalState& gs, const PredicateSpec& spec,
                                                   Timestamp now);

/// Monitor state for semilinear predicates: the candidates of each server
/// that may still be part of a violating cut.
struct SemilinearState {
  std::vector<std::size_t> servers;
  std::map<std::size_t, std::deque<Candidate>> retained;
  std::map<std::size_t, HvcInterval> latest;
  std::size_t queue_limit = 1024;
  std::uint64_t dropped = 0;
  std::uint64_t pruned = 0;

  explicit SemilinearState(std::vector<std::size_t> participants = {}, std::size_t limit = 1024);
};

/// Adds `arrived` and searches the cuts it can complete. At most one report
/// per arriving candidate.
std::optional<ViolationReport> monitor_step_semilinear(SemilinearState& st, Candidate arrived,
                                                       const PredicateSpec& spec, Timestamp now);

/// Detection state for one predicate, dispatching on its kind.
class PredicateMonitor {
 public:
  PredicateMonitor(PredicateSpec spec, std::vector<std::size_t> participants,
                   std::size_t queue_limit = 1024);

  std::vector<ViolationReport> push(Candidate c, Timestamp now);
  const PredicateSpec& spec() const { return spec_; }
  std::uint64_t dropped() const;

 private:
  PredicateSpec spec_;
  GlobalState linear_;
  SemilinearState semilinear_;
};

using CandidateSink = std::function<void(Candidate)>;

/// Server-side detector installed as the store's put hook.
class LocalDetector {
 public:
  LocalDetector(std::size_t server, PredicateRegistry& registry, const Placement& placement,
                CandidateSink sink);

  /// Called before a write of `key` is applied; `pre` is the pre-write table.
  void on_put(const ServerState& pre, const std::string& key, const HybridVectorClock& now);
  /// Emits candidates for the current state of every predicate seen so far,
  /// as if a final relevant write happened at `now`.
  void flush(const ServerState& state, const HybridVectorClock& now);

  std::uint64_t emitted() const { return emitted_; }

 private:
  void consider(const PredicateSpec& spec, const ServerState& pre, const std::string* key,
                const HybridVectorClock& now);
  HybridVectorClock interval_start(const std::vector<std::string>& vars,
                                   const HybridVectorClock& now) const;

  std::size_t server_;
  PredicateRegistry& registry_;
  const Placement& placement_;
  CandidateSink sink_;
  std::map<std::string, HybridVectorClock, std::less<>> last_write_;
  std::map<std::string, PredicateSpec, std::less<>> seen_;
  std::uint64_t emitted_ = 0;
};

/// A monitor process: receives candidates for the predicates hashed to it and
/// notifies registered clients of violations.
class Monitor {
 public:
  using Listener = std::function<void(const ViolationReport&)>;

  Monitor(Network& net, ProcessId pid, std::size_t id, PredicateRegistry& registry,
          const Placement& placement, MetricsSink& metrics, std::size_t queue_limit = 1024);

  ProcessId pid() const { return pid_; }
  std::size_t id() const { return id_; }
  void add_listener(ProcessId client, Listener on_report);

  void on_candidate(Candidate c);
  /// Forgets all state of a collected predicate.
  void drop(std::string_view predicate);

  std::uint64_t candidates() const { return candidates_; }
  std::uint64_t reports() const { return reports_; }
  std::uint64_t duplicates() const { return duplicates_; }
  std::uint64_t ignored() const { return ignored_; }
  std::size_t tracked() const { return monitors_.size(); }

 private:
  Network& net_;
  ProcessId pid_;
  std::size_t id_;
  PredicateRegistry& registry_;
  const Placement& placement_;
  MetricsSink& metrics_;
  std::size_t queue_limit_;
  std::map<std::string, PredicateMonitor, std::less<>> monitors_;
  std::vector<std::pair<ProcessId, Listener>> listeners_;
  std::uint64_t candidates_ = 0;
  std::uint64_t reports_ = 0;
  std::uint64_t duplicates_ = 0;
  /// Reported T_violate values per predicate; several cuts often share one.
  std::map<std::string, std::set<Timestamp>, std::less<>> reported_;
  std::uint64_t ignored_ = 0;
};

/// Installs a detector on every server that ships candidates to the monitor
/// assigned to each predicate.
std::vector<std::unique_ptr<LocalDetector>> attach_detectors(
    Network& net, const std::vector<KvServer*>& servers, const std::vector<Monitor*>& monitors,
    PredicateRegistry& registry, const Placement& placement, MetricsSink& metrics);

/// Small recorded execution used by the exhaustive oracle. Messages are
/// matched by id; every process also has an initial and a final state.
struct TraceEvent {
  enum class Kind { Write, Send, Receive };
  Kind kind = Kind::Write;
  std::string variable;
  Version version;
  std::string value;
  std::size_t message = 0;
};

struct Trace {
  std::size_t processes = 0;
  std::vector<std::vector<TraceEvent>> events;
};

inline constexpr std::size_t kOracleMaxProcesses = 4;
inline constexpr std::size_t kOracleMaxEvents = 6;

/// Exhaustive check of the possibility modality: true iff some pairwise
/// concurrent choice of one state per process satisfies the spec. Linear specs
/// read each variable at its home process only. Throws std::length_error on
/// traces beyond the size bounds.
bool brute_force_detect(const Trace& trace, const PredicateSpec& spec, const Placement& placement);

/// Replays `trace` through local detectors and a PredicateMonitor. Candidates
/// reach the monitor in an order chosen by `seed` that keeps per-process FIFO.
/// Returns the number of reports.
std::size_t replay_with_monitor(const Trace& trace, const PredicateSpec& spec,
                                const Placement& placement, std::uint64_t seed);

}  // namespace kvmon
