#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kvmon/hvc.hpp"
#include "kvmon/metrics.hpp"
#include "kvmon/simnet.hpp"

namespace kvmon {

using ClientId = std::uint32_t;

enum class VersionOrder { Before, After, Equal, Concurrent };

/// Vector clock over client ids; each client only bumps its own slot.
class Version {
 public:
  Version() = default;
  Version(std::initializer_list<std::pair<const ClientId, std::uint64_t>> init);

  std::uint64_t at(ClientId c) const;
  void increment(ClientId c) { ++counters_[c]; }
  /// Componentwise maximum.
  void merge(const Version& other);
  const std::map<ClientId, std::uint64_t>& counters() const { return counters_; }

  friend bool operator==(const Version& a, const Version& b);
  std::string to_string() const;

 private:
  std::map<ClientId, std::uint64_t> counters_;  // zero slots are never stored
};

VersionOrder compare_versions(const Version& a, const Version& b);

struct VersionedEntry {
  Version version;
  std::string value;
};

/// Multi-version register: stored versions are pairwise concurrent.
class VersionedValue {
 public:
  /// True if a put of `v` would be stored (no stored version dominates or equals it).
  bool accepts(const Version& v) const;
  /// Stores (v, value) and drops every version it dominates. Returns false if stale.
  bool put(const Version& v, std::string value);
  /// Folds another replica's versions in, keeping the set antichain.
  void absorb(const VersionedValue& other);

  const std::vector<VersionedEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  bool has_value(std::string_view value) const;
  /// Componentwise max over all stored versions.
  Version merged_version() const;

 private:
  std::vector<VersionedEntry> entries_;
};

struct QuorumConfig {
  int n = 3;
  int r = 1;
  int w = 1;
  Timestamp timeout = 500 * kMicrosPerMilli;

  void validate(int server_count) const;
  std::string name() const;
  /// Parses "N3R1W3".
  static QuorumConfig parse(std::string_view text);
};

enum class Consistency { Sequential, Eventual };

const char* to_string(Consistency c);
Consistency classify_consistency(const QuorumConfig& cfg);

/// How long the first request round waits: until R (or W) replies arrive, or
/// until every contacted server replied or the timeout fired.
enum class Completion { Quorum, AllOrTimeout };

struct ServerState;

/// Invoked by server_put before a non-stale write is applied; `state` still
/// holds the pre-write table.
using PutHook = std::function<void(const ServerState& state, const std::string& key,
                                   const HybridVectorClock& now)>;

struct ServerState {
  std::size_t id = 0;
  RegionId region = 0;
  std::map<std::string, VersionedValue, std::less<>> table;
  PutHook hook;

  const VersionedValue* find(std::string_view key) const;
};

/// Applies a replicated write. Returns false (and skips the hook) when the
/// incoming version is dominated by or equal to a stored one.
bool server_put(ServerState& state, const std::string& key, const Version& version,
                std::string value, const HybridVectorClock& hvc_now);

struct ServiceTimes {
  Timestamp read = 300;   // us
  Timestamp write = 500;  // us
};

/// A storage server process on the simulated network.
class KvServer {
 public:
  KvServer(Network& net, ProcessId pid, std::size_t id, ServiceTimes times, MetricsSink& metrics);

  ProcessId pid() const { return pid_; }
  std::size_t id() const { return state_.id; }
  ServerState& state() { return state_; }
  const ServerState& state() const { return state_; }
  std::uint64_t ops() const { return ops_; }

  // Request handlers; the reply callbacks run at the requesting client.
  void on_get(ProcessId client, const std::string& key, std::function<void(VersionedValue)> reply);
  void on_get_version(ProcessId client, const std::string& key,
                      std::function<void(VersionedValue)> reply);
  void on_put(ProcessId client, const std::string& key, const Version& version, std::string value,
              std::function<void()> ack);

 private:
  Network& net_;
  ProcessId pid_;
  ServerState state_;
  ServiceTimes times_;
  MetricsSink& metrics_;
  std::uint64_t ops_ = 0;
};

struct GetResult {
  bool ok = false;
  VersionedValue value;
};

/// Client-side replication library: quorum GET and GET_VERSION+PUT with a
/// second request round on timeout.
class KvClient {
 public:
  KvClient(Network& net, ProcessId pid, ClientId id, std::vector<KvServer*> servers,
           QuorumConfig quorum, Completion completion, MetricsSink& metrics);

  ProcessId pid() const { return pid_; }
  ClientId id() const { return id_; }
  const QuorumConfig& quorum() const { return quorum_; }
  void set_quorum(QuorumConfig q);

  void get(const std::string& key, std::function<void(GetResult)> done);
  void put(const std::string& key, std::string value, std::function<void(bool ok)> done);

  /// Version formed by the most recent put (valid once its GET_VERSION phase finished).
  const Version& last_put_version() const { return last_put_version_; }
  std::uint64_t failed_gets() const { return failed_gets_; }
  std::uint64_t failed_puts() const { return failed_puts_; }

 private:
  enum class Request { Get, GetVersion };
  struct ReadRound;
  struct WriteRound;

  void read(Request kind, const std::string& key, std::function<void(GetResult)> done);
  void send_read(const std::shared_ptr<ReadRound>& round, std::size_t server);
  void arm_read_timer(const std::shared_ptr<ReadRound>& round);
  void write(const std::string& key, const Version& version, std::string value,
             std::function<void(bool)> done);
  void send_write(const std::shared_ptr<WriteRound>& round, std::size_t server);
  void arm_write_timer(const std::shared_ptr<WriteRound>& round);

  Network& net_;
  ProcessId pid_;
  ClientId id_;
  std::vector<KvServer*> servers_;
  QuorumConfig quorum_;
  Completion completion_;
  MetricsSink& metrics_;
  std::uint64_t failed_gets_ = 0;
  std::uint64_t failed_puts_ = 0;
  Version last_put_version_;
};

}  // namespace kvmon
