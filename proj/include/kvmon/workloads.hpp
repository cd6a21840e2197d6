#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kvmon/graph.hpp"
#include "kvmon/kvstore.hpp"
#include "kvmon/metrics.hpp"
#include "kvmon/predicates.hpp"
#include "kvmon/rollback.hpp"

namespace kvmon {

/// Peterson lock for the edge between two nodes owned by different clients.
struct EdgeLock {
  NodeId a = 0;
  NodeId b = 0;

  static EdgeLock between(NodeId x, NodeId y);
  std::string flag(NodeId who) const { return flag_variable(a, b, who); }
  std::string turn() const { return turn_variable(a, b); }
  std::string predicate() const { return edge_predicate_name(a, b); }
  NodeId peer(NodeId self) const;

  auto operator<=>(const EdgeLock&) const = default;
};

/// Locks of every cross-client edge incident to `nodes`, in acquisition order.
std::vector<EdgeLock> task_locks(const WorkGraph& g, const std::vector<NodeId>& nodes);

/// Smallest non-negative integer not in `neighbor_colors`.
int coloring_color_choice(const std::vector<int>& neighbor_colors);

/// Concurrent turn versions (two contenders writing from the same base) are
/// resolved to the value of the greatest version, so every reader that sees
/// the same siblings agrees. Unset if turn was never written.
std::optional<std::string> resolve_turn(const VersionedValue& turn);

/// Entry test: no returned version of the peer flag is "true", or the
/// resolved turn names the peer.
bool peterson_may_enter(const VersionedValue& peer_flag, const VersionedValue& turn, NodeId self);

struct PetersonOptions {
  Timestamp poll_interval = kMicrosPerMilli;
  /// Spinning longer than this gives up (the caller parks the task).
  Timestamp spin_timeout = 30 * kMicrosPerSecond;
};

void peterson_acquire(KvClient& client, Scheduler& sched, const EdgeLock& lock, NodeId self,
                      const PetersonOptions& opt, std::function<void(bool)> done);
void peterson_release(KvClient& client, const EdgeLock& lock, NodeId self,
                      std::function<void()> done);

/// Ground truth shared by the clients of one run: which clients currently sit
/// inside each edge critical section.
class CsTracker {
 public:
  explicit CsTracker(MetricsSink& metrics) : metrics_(metrics) {}
  void enter(const std::string& predicate, std::size_t client, Timestamp now);
  void leave(const std::string& predicate, std::size_t client);
  std::uint64_t co_occupancy() const { return co_occupancy_; }

 private:
  MetricsSink& metrics_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> inside_;
  std::uint64_t co_occupancy_ = 0;
};

/// Common interface of the per-client application loops.
class AppClient {
 public:
  virtual ~AppClient() = default;
  virtual void start() = 0;
  virtual void on_report(const ViolationReport&) {}
  /// Terminating workloads report completion; the others never finish.
  virtual bool finished() const { return false; }
  virtual std::optional<Timestamp> finished_at() const { return std::nullopt; }
  virtual std::uint64_t aborts() const { return 0; }
  virtual std::uint64_t writes_in_aborted() const { return 0; }
  virtual bool switched() const { return false; }
};

enum class GraphApp { Coloring, Weather };

struct GraphAppOptions {
  GraphApp app = GraphApp::Coloring;
  std::size_t task_size = 10;
  /// Schedule nodes without cross-client edges before boundary nodes.
  bool interior_first = false;
  /// Weather: probability that a node step PUTs its new value.
  double put_ratio = 0.5;
  PetersonOptions lock;
  LivelockStrategy strategy;
  Timestamp park_delay = 500 * kMicrosPerMilli;
};

std::string color_key(NodeId n);
std::string weather_key(NodeId n);
/// Deterministic starting value of a weather node.
std::int64_t weather_initial(NodeId n);
/// Integer mean of the node's own value and its neighbours' values.
std::int64_t weather_aggregate(std::int64_t own, const std::vector<std::int64_t>& neighbors);

/// Coloring or weather client: owned nodes are split into tasks run through
/// the detect-rollback protocol.
class GraphClient : public AppClient {
 public:
  GraphClient(Scheduler& sched, KvClient& kv, const WorkGraph& graph, std::size_t client,
              GraphAppOptions opt, CsTracker& cs, MetricsSink& metrics, std::uint64_t seed);

  void start() override;
  void on_report(const ViolationReport& r) override { runner_.on_report(r); }
  bool finished() const override;
  std::optional<Timestamp> finished_at() const override { return finished_at_; }
  std::uint64_t aborts() const override { return rt_.aborts(); }
  std::uint64_t writes_in_aborted() const override { return rt_.writes_in_aborted(); }
  bool switched() const override { return rt_.switched(); }

  const ClientRuntime& runtime() const { return rt_; }
  std::uint64_t parks() const { return runner_.parks(); }
  std::uint64_t value_puts() const { return value_puts_; }
  std::uint64_t node_steps() const { return node_steps_; }

 private:
  std::vector<Task> make_tasks();
  TaskHooks hooks();
  void acquire(Task& t, std::function<void(bool)> done);
  void read(Task& t, std::function<void()> done);
  void write(Task& t, std::function<void()> done);
  void release(Task& t, std::function<void()> done);

  Scheduler& sched_;
  KvClient& kv_;
  const WorkGraph& graph_;
  std::size_t client_;
  GraphAppOptions opt_;
  CsTracker& cs_;
  MetricsSink& metrics_;
  std::mt19937_64 rng_;
  ClientRuntime rt_;
  TaskRunner runner_;
  std::size_t next_task_id_ = 0;
  std::vector<EdgeLock> locks_;
  std::size_t touched_ = 0;
  std::size_t entered_ = 0;
  std::map<NodeId, std::int64_t> pending_;
  std::map<NodeId, std::int64_t> own_values_;
  std::uint64_t value_puts_ = 0;
  std::uint64_t node_steps_ = 0;
  std::optional<Timestamp> finished_at_;
};

/// Conjunctive stress: each client flips its local variable every period.
struct ConjunctiveOptions {
  double beta = 0.01;
  Timestamp period = 5 * kMicrosPerMilli;
  /// Clients per conjunctive predicate.
  std::size_t group = 2;
};

std::string conjunctive_variable(std::size_t group, std::size_t client);
std::string conjunctive_predicate(std::size_t group);
/// Linear spec P_1 ∧ ... ∧ P_group over the clients of one group.
PredicateSpec conjunctive_spec(std::size_t group, const std::vector<std::size_t>& clients);

class ConjunctiveClient : public AppClient {
 public:
  ConjunctiveClient(Scheduler& sched, KvClient& kv, std::size_t client, std::size_t group,
                    ConjunctiveOptions opt, std::uint64_t seed);
  void start() override;
  std::uint64_t trues() const { return trues_; }
  std::uint64_t steps() const { return steps_; }

 private:
  void step();

  Scheduler& sched_;
  KvClient& kv_;
  std::size_t client_;
  std::size_t group_;
  ConjunctiveOptions opt_;
  std::mt19937_64 rng_;
  std::uint64_t trues_ = 0;
  std::uint64_t steps_ = 0;
};

/// Closed-loop GET/PUT mix over a uniform key space.
struct KvOptions {
  double put_ratio = 0.0;
  std::size_t keys = 1000;
};

class KvLoadClient : public AppClient {
 public:
  KvLoadClient(KvClient& kv, KvOptions opt, std::uint64_t seed);
  void start() override { step(); }
  std::uint64_t gets() const { return gets_; }
  std::uint64_t puts() const { return puts_; }

 private:
  void step();

  KvClient& kv_;
  KvOptions opt_;
  std::mt19937_64 rng_;
  std::uint64_t gets_ = 0;
  std::uint64_t puts_ = 0;
};

}  // namespace kvmon
