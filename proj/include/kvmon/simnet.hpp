#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvmon/hvc.hpp"

namespace kvmon {

using ProcessId = std::size_t;
using RegionId = std::size_t;

inline constexpr Timestamp kMicrosPerMilli = 1000;
inline constexpr Timestamp kMicrosPerSecond = 1000000;

Timestamp from_ms(double ms);
double to_ms(Timestamp t);

struct Region {
  RegionId id = 0;
  std::string label;
};

/// One-way latency of a region pair: a fixed base plus Gamma(shape, scale) jitter.
struct LinkLatency {
  Timestamp base = 0;
  double gamma_shape = 0.0;
  double gamma_scale = 0.0;  // microseconds

  static LinkLatency fixed(Timestamp base) { return {base, 0.0, 0.0}; }
  /// Default jitter: shape 2, scale base/10.
  static LinkLatency with_default_jitter(Timestamp base) {
    return {base, 2.0, static_cast<double>(base) / 10.0};
  }
  double mean() const { return static_cast<double>(base) + gamma_shape * gamma_scale; }
};

class LatencyModel {
 public:
  LatencyModel() = default;
  LatencyModel(std::size_t region_count, LinkLatency intra, LinkLatency cross);

  std::size_t region_count() const { return regions_; }
  /// Sets the latency of a region pair in both directions.
  void set_link(RegionId a, RegionId b, LinkLatency latency);
  const LinkLatency& link(RegionId a, RegionId b) const;

  Timestamp sample(RegionId from, RegionId to, std::mt19937_64& rng) const;

 private:
  std::size_t regions_ = 0;
  std::vector<LinkLatency> links_;  // row-major regions_ x regions_
};

/// Discrete-event scheduler: events run in (time, insertion sequence) order.
class Scheduler {
 public:
  using Handler = std::function<void()>;

  Timestamp now() const { return now_; }
  void at(Timestamp t, Handler h);
  void after(Timestamp delay, Handler h) { at(now_ + delay, std::move(h)); }

  /// Runs every event scheduled at or before `stop`; returns how many ran.
  std::size_t run_until(Timestamp stop);
  /// Runs until the queue drains or stop_soon() is called.
  std::size_t run();
  void stop_soon() { stopping_ = true; }

  bool empty() const { return queue_.empty(); }
  std::size_t pending() const { return queue_.size(); }
  std::uint64_t executed() const { return executed_; }
  /// Order-sensitive digest of every executed (time, sequence) pair.
  std::uint64_t trace_hash() const { return trace_hash_; }

 private:
  struct Event {
    Timestamp time;
    std::uint64_t seq;
    Handler handler;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  Timestamp now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t executed_ = 0;
  std::uint64_t trace_hash_ = 1469598103934665603ULL;
  bool stopping_ = false;
};

enum class MessageKind : std::uint8_t {
  Get,
  GetReply,
  GetVersion,
  GetVersionReply,
  Put,
  PutAck,
  Candidate,
  Violation,
  Count
};

const char* to_string(MessageKind kind);

/// A region pair is unreachable during [from, to).
struct PartitionWindow {
  RegionId a = 0;
  RegionId b = 0;
  Timestamp from = 0;
  Timestamp to = 0;
};

/// Message transport between registered processes. Every send and delivery
/// updates the hybrid vector clocks of the endpoints; per-channel FIFO order
/// is preserved regardless of latency sampling.
class Network {
 public:
  Network(Scheduler& scheduler, LatencyModel model, std::uint64_t seed,
          Timestamp epsilon = kInfiniteEpsilon);

  ProcessId add_process(RegionId region, std::string label);
  /// Fixes the process count and creates the clocks; no processes may be added afterwards.
  void freeze();

  std::size_t process_count() const { return processes_.size(); }
  RegionId region(ProcessId p) const { return processes_.at(p).region; }
  const std::string& label(ProcessId p) const { return processes_.at(p).label; }
  const HybridVectorClock& clock(ProcessId p) const { return processes_.at(p).clock; }
  Timestamp epsilon() const { return epsilon_; }
  Scheduler& scheduler() { return scheduler_; }
  const LatencyModel& latency() const { return model_; }

  /// Records a local event at `p` and returns its clock.
  const HybridVectorClock& tick(ProcessId p);

  /// Sends a message; `on_deliver` runs at the receiver after its clock absorbed
  /// the sender's timestamp. Returns false if the message was dropped by a partition.
  bool send(ProcessId from, ProcessId to, MessageKind kind, std::function<void()> on_deliver);

  void add_partition(PartitionWindow window) { partitions_.push_back(window); }
  bool partitioned(RegionId a, RegionId b, Timestamp t) const;

  std::uint64_t sent(MessageKind kind) const { return sent_[static_cast<std::size_t>(kind)]; }
  std::uint64_t dropped() const { return dropped_; }
  std::uint64_t trace_hash() const { return trace_hash_; }

 private:
  struct ProcessInfo {
    RegionId region = 0;
    std::string label;
    HybridVectorClock clock;
    Timestamp last_pt = 0;
  };

  Timestamp physical_time(ProcessInfo& info);

  Scheduler& scheduler_;
  LatencyModel model_;
  std::mt19937_64 rng_;
  Timestamp epsilon_;
  bool frozen_ = false;
  std::vector<ProcessInfo> processes_;
  std::unordered_map<std::uint64_t, Timestamp> channel_tail_;
  std::vector<PartitionWindow> partitions_;
  std::uint64_t sent_[static_cast<std::size_t>(MessageKind::Count)] = {};
  std::uint64_t dropped_ = 0;
  std::uint64_t trace_hash_ = 1469598103934665603ULL;
};

}  // namespace kvmon
