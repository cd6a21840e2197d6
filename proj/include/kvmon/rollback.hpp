#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kvmon/detection.hpp"
#include "kvmon/kvstore.hpp"
#include "kvmon/metrics.hpp"

namespace kvmon {

enum class Phase { Read, Write, Done };

struct Task {
  std::size_t id = 0;
  std::vector<std::uint64_t> nodes;
  Phase phase = Phase::Read;
  int attempts = 0;

  void begin_write();
  void complete();
  /// Back to Read with one more attempt. Only legal from Read.
  void abort();
};

enum class StrategyKind { None, Backoff, Reorder, Adaptive };

struct LivelockStrategy {
  StrategyKind kind = StrategyKind::None;
  Timestamp max_delay = 100 * kMicrosPerMilli;
  int backoff_cap = 6;
  int threshold = 3;
  Timestamp window = 30 * kMicrosPerSecond;
  QuorumConfig sequential{3, 1, 3};

  static StrategyKind parse_kind(std::string_view name);
  static std::string_view kind_name(StrategyKind k);
};

/// Uniform in [0, max_delay * 2^min(attempt, cap)).
Timestamp backoff_delay(const LivelockStrategy& s, int attempt, std::mt19937_64& rng);

enum class ViolationAction { Ignore, AbortCurrent, ContinueWrite };

/// `current` is null when the client is between tasks.
ViolationAction handle_violation(const Task* current, bool involved);

struct RetryPlan {
  Timestamp delay = 0;
  bool switched = false;
};

/// Per-client task list, violation bookkeeping and livelock handling.
class ClientRuntime {
 public:
  ClientRuntime(std::size_t client, std::vector<Task> tasks, LivelockStrategy strategy,
                QuorumConfig quorum, std::uint64_t seed);

  std::size_t client() const { return client_; }
  bool finished() const { return remaining_.empty(); }
  Task& current() { return remaining_.front(); }
  const std::deque<Task>& remaining() const { return remaining_; }
  const QuorumConfig& quorum() const { return quorum_; }
  const LivelockStrategy& strategy() const { return strategy_; }
  bool switched() const { return switched_; }

  /// Starts an attempt of the front task; notifications only matter during one.
  void begin_attempt();
  void end_attempt() { active_ = false; }
  bool active() const { return active_; }

  /// Remembers that this client obtained the lock guarded by `predicate`.
  void note_lock(const std::string& predicate) { held_.insert(predicate); }
  bool involved(const ViolationReport& r) const { return held_.count(r.predicate) > 0; }

  ViolationAction on_violation(const ViolationReport& r);
  bool abort_requested() const { return abort_requested_; }

  /// Workload-value PUT issued by the current attempt.
  void note_value_write() { ++attempt_writes_; }

  /// Queues more work behind the remaining tasks.
  void append(std::vector<Task> tasks);

  /// Aborts the current task and applies the livelock strategy.
  RetryPlan on_abort(Timestamp now);
  void on_success();

  std::uint64_t aborts() const { return aborts_; }
  std::uint64_t completed() const { return completed_; }
  std::uint64_t notifications() const { return notifications_; }
  std::uint64_t ignored() const { return ignored_; }
  /// Value writes committed by attempts that were later aborted; stays 0.
  std::uint64_t writes_in_aborted() const { return writes_in_aborted_; }

 private:
  std::size_t client_;
  std::deque<Task> remaining_;
  LivelockStrategy strategy_;
  QuorumConfig quorum_;
  std::mt19937_64 rng_;
  bool switched_ = false;
  bool active_ = false;
  bool abort_requested_ = false;
  std::set<std::string, std::less<>> held_;
  std::deque<Timestamp> recent_aborts_;
  std::uint64_t attempt_writes_ = 0;
  std::uint64_t aborts_ = 0;
  std::uint64_t completed_ = 0;
  std::uint64_t notifications_ = 0;
  std::uint64_t ignored_ = 0;
  std::uint64_t writes_in_aborted_ = 0;
};

/// Workload callbacks driven by TaskRunner. Each takes a continuation.
struct TaskHooks {
  /// Obtains every lock of the task; false if the spin bound was hit.
  std::function<void(Task&, std::function<void(bool)>)> acquire;
  /// Reads inputs and computes new values in local memory.
  std::function<void(Task&, std::function<void()>)> read;
  std::function<void(Task&, std::function<void()>)> write;
  std::function<void(Task&, std::function<void()>)> release;
  /// Called after an Adaptive switch.
  std::function<void(const QuorumConfig&)> set_quorum;
};

/// Runs the client's tasks one at a time: a task whose Read phase saw a
/// relevant violation is released and retried.
class TaskRunner {
 public:
  /// A parked attempt is retried after uniform [park_delay/2, 3*park_delay/2).
  TaskRunner(Scheduler& sched, ClientRuntime& rt, TaskHooks hooks, MetricsSink& metrics,
             Timestamp park_delay, std::uint64_t seed = 0);

  void start();
  void on_report(const ViolationReport& r);
  bool done() const { return rt_.finished(); }
  std::uint64_t parks() const { return parks_; }
  void set_on_finished(std::function<void()> f) { on_finished_ = std::move(f); }
  void set_on_task_done(std::function<void(const Task&)> f) { on_task_done_ = std::move(f); }

 private:
  void next();
  void perform();

  Scheduler& sched_;
  ClientRuntime& rt_;
  TaskHooks hooks_;
  MetricsSink& metrics_;
  Timestamp park_delay_;
  std::mt19937_64 rng_;
  std::uint64_t parks_ = 0;
  std::function<void()> on_finished_;
  std::function<void(const Task&)> on_task_done_;
};

}  // namespace kvmon
