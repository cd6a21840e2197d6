#include "kvmon/kvstore.hpp"

#include <algorithm>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace kvmon {

Version::Version(std::initializer_list<std::pair<const ClientId, std::uint64_t>> init) {
  for (const auto& [c, v] : init) {
    if (v) counters_[c] = v;
  }
}

std::uint64_t Version::at(ClientId c) const {
  auto it = counters_.find(c);
  return it == counters_.end() ? 0 : it->second;
}

void Version::merge(const Version& other) {
  for (const auto& [c, v] : other.counters_) {
    auto& slot = counters_[c];
    slot = std::max(slot, v);
  }
}

bool operator==(const Version& a, const Version& b) { return a.counters_ == b.counters_; }

std::string Version::to_string() const {
  std::ostringstream os;
  os << '{';
  bool first = true;
  for (const auto& [c, v] : counters_) {
    if (!first) os << ',';
    first = false;
    os << c << ':' << v;
  }
  os << '}';
  return os.str();
}

VersionOrder compare_versions(const Version& a, const Version& b) {
  bool a_less = false;
  bool b_less = false;
  auto ia = a.counters().begin();
  auto ib = b.counters().begin();
  const auto ea = a.counters().end();
  const auto eb = b.counters().end();
  // Merge walk over the two sparse maps; absent slots are zero.
  while (ia != ea || ib != eb) {
    if (ib == eb || (ia != ea && ia->first < ib->first)) {
      b_less = true;
      ++ia;
    } else if (ia == ea || ib->first < ia->first) {
      a_less = true;
      ++ib;
    } else {
      if (ia->second < ib->second) a_less = true;
      if (ib->second < ia->second) b_less = true;
      ++ia;
      ++ib;
    }
  }
  if (a_less && b_less) return VersionOrder::Concurrent;
  if (a_less) return VersionOrder::Before;
  if (b_less) return VersionOrder::After;
  return VersionOrder::Equal;
}

bool VersionedValue::accepts(const Version& v) const {
  return std::none_of(entries_.begin(), entries_.end(), [&](const VersionedEntry& e) {
    const VersionOrder o = compare_versions(v, e.version);
    return o == VersionOrder::Before || o == VersionOrder::Equal;
  });
}

bool VersionedValue::put(const Version& v, std::string value) {
  if (!accepts(v)) return false;
  std::erase_if(entries_, [&](const VersionedEntry& e) {
    return compare_versions(e.version, v) == VersionOrder::Before;
  });
  entries_.push_back(VersionedEntry{v, std::move(value)});
  return true;
}

void VersionedValue::absorb(const VersionedValue& other) {
  for (const auto& e : other.entries_) put(e.version, e.value);
}

bool VersionedValue::has_value(std::string_view value) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const VersionedEntry& e) { return e.value == value; });
}

Version VersionedValue::merged_version() const {
  Version out;
  for (const auto& e : entries_) out.merge(e.version);
  return out;
}

void QuorumConfig::validate(int server_count) const {
  if (n < 1 || r < 1 || w < 1 || r > n || w > n) {
    throw std::invalid_argument("quorum: require 1 <= R,W <= N, got " + name());
  }
  if (n != server_count) {
    throw std::invalid_argument("quorum: N must equal the server count");
  }
  if (timeout <= 0) throw std::invalid_argument("quorum: timeout must be positive");
}

std::string QuorumConfig::name() const {
  return "N" + std::to_string(n) + "R" + std::to_string(r) + "W" + std::to_string(w);
}

QuorumConfig QuorumConfig::parse(std::string_view text) {
  static const std::regex re(R"(N(\d+)R(\d+)W(\d+))", std::regex::icase);
  std::cmatch m;
  if (!std::regex_match(text.begin(), text.end(), m, re)) {
    throw std::invalid_argument("quorum: cannot parse '" + std::string(text) + "'");
  }
  QuorumConfig q;
  q.n = std::stoi(m[1]);
  q.r = std::stoi(m[2]);
  q.w = std::stoi(m[3]);
  return q;
}

const char* to_string(Consistency c) {
  return c == Consistency::Sequential ? "sequential" : "eventual";
}

Consistency classify_consistency(const QuorumConfig& cfg) {
  // W > N/2 written without division so odd N is exact.
  const bool sequential = cfg.w + cfg.r > cfg.n && 2 * cfg.w > cfg.n;
  return sequential ? Consistency::Sequential : Consistency::Eventual;
}

const VersionedValue* ServerState::find(std::string_view key) const {
  auto it = table.find(key);
  return it == table.end() ? nullptr : &it->second;
}

bool server_put(ServerState& state, const std::string& key, const Version& version,
                std::string value, const HybridVectorClock& hvc_now) {
  auto it = state.table.find(key);
  if (it != state.table.end() && !it->second.accepts(version)) return false;
  if (state.hook) state.hook(state, key, hvc_now);
  state.table[key].put(version, std::move(value));
  return true;
}

KvServer::KvServer(Network& net, ProcessId pid, std::size_t id, ServiceTimes times,
                   MetricsSink& metrics)
    : net_(net), pid_(pid), times_(times), metrics_(metrics) {
  state_.id = id;
  state_.region = net.region(pid);
}

void KvServer::on_get(ProcessId client, const std::string& key,
                      std::function<void(VersionedValue)> reply) {
  ++ops_;
  metrics_.server_op(net_.scheduler().now());
  net_.scheduler().after(times_.read, [this, client, key, reply = std::move(reply)]() mutable {
    const VersionedValue* v = state_.find(key);
    net_.send(pid_, client, MessageKind::GetReply,
              [reply = std::move(reply), value = v ? *v : VersionedValue{}]() { reply(value); });
  });
}

void KvServer::on_get_version(ProcessId client, const std::string& key,
                              std::function<void(VersionedValue)> reply) {
  ++ops_;
  metrics_.server_op(net_.scheduler().now());
  net_.scheduler().after(times_.read, [this, client, key, reply = std::move(reply)]() mutable {
    VersionedValue versions;
    if (const VersionedValue* v = state_.find(key)) {
      for (const auto& e : v->entries()) versions.put(e.version, {});
    }
    net_.send(pid_, client, MessageKind::GetVersionReply,
              [reply = std::move(reply), versions = std::move(versions)]() { reply(versions); });
  });
}

void KvServer::on_put(ProcessId client, const std::string& key, const Version& version,
                      std::string value, std::function<void()> ack) {
  ++ops_;
  metrics_.server_op(net_.scheduler().now());
  net_.scheduler().after(times_.write, [this, client, key, version, value = std::move(value),
                                        ack = std::move(ack)]() mutable {
    const HybridVectorClock& now = net_.tick(pid_);
    server_put(state_, key, version, std::move(value), now);
    // Stale writes are still acknowledged: the replica already holds newer data.
    net_.send(pid_, client, MessageKind::PutAck, std::move(ack));
  });
}

struct KvClient::ReadRound {
  Request kind;
  std::string key;
  int required = 1;
  std::vector<bool> contacted;
  std::vector<bool> responded;
  int replies = 0;
  int round = 1;
  bool finished = false;
  VersionedValue merged;
  std::function<void(GetResult)> done;
};

struct KvClient::WriteRound {
  std::string key;
  Version version;
  std::string value;
  int required = 1;
  std::vector<bool> contacted;
  std::vector<bool> responded;
  int acks = 0;
  int round = 1;
  bool finished = false;
  std::function<void(bool)> done;
};

KvClient::KvClient(Network& net, ProcessId pid, ClientId id, std::vector<KvServer*> servers,
                   QuorumConfig quorum, Completion completion, MetricsSink& metrics)
    : net_(net),
      pid_(pid),
      id_(id),
      servers_(std::move(servers)),
      quorum_(quorum),
      completion_(completion),
      metrics_(metrics) {
  quorum_.validate(static_cast<int>(servers_.size()));
}

void KvClient::set_quorum(QuorumConfig q) {
  q.validate(static_cast<int>(servers_.size()));
  quorum_ = q;
}

void KvClient::get(const std::string& key, std::function<void(GetResult)> done) {
  read(Request::Get, key, [this, done = std::move(done)](GetResult res) {
    if (res.ok) {
      metrics_.app_op(net_.scheduler().now());
    } else {
      ++failed_gets_;
    }
    done(std::move(res));
  });
}

void KvClient::put(const std::string& key, std::string value, std::function<void(bool)> done) {
  read(Request::GetVersion, key,
       [this, key, value = std::move(value), done = std::move(done)](GetResult res) mutable {
         if (!res.ok) {
           ++failed_puts_;
           done(false);
           return;
         }
         Version next = res.value.merged_version();
         next.increment(id_);
         last_put_version_ = next;
         write(key, next, std::move(value), [this, done = std::move(done)](bool ok) {
           if (ok) {
             metrics_.app_op(net_.scheduler().now());
           } else {
             ++failed_puts_;
           }
           done(ok);
         });
       });
}

void KvClient::read(Request kind, const std::string& key, std::function<void(GetResult)> done) {
  auto round = std::make_shared<ReadRound>();
  round->kind = kind;
  round->key = key;
  round->required = quorum_.r;
  round->contacted.assign(servers_.size(), false);
  round->responded.assign(servers_.size(), false);
  round->done = std::move(done);
  for (std::size_t s = 0; s < servers_.size(); ++s) send_read(round, s);
  arm_read_timer(round);
}

void KvClient::send_read(const std::shared_ptr<ReadRound>& round, std::size_t s) {
  round->contacted[s] = true;
  KvServer* server = servers_[s];
  auto on_reply = [this, round, s](VersionedValue v) {
    if (round->finished || round->responded[s]) return;
    round->responded[s] = true;
    ++round->replies;
    round->merged.absorb(v);
    const bool enough = round->replies >= round->required;
    const bool all = round->replies == static_cast<int>(servers_.size());
    if ((completion_ == Completion::Quorum && enough) || all) {
      round->finished = true;
      round->done(GetResult{enough, round->merged});
    }
  };
  const ProcessId me = pid_;
  const std::string key = round->key;
  if (round->kind == Request::Get) {
    net_.send(pid_, server->pid(), MessageKind::Get,
              [server, me, key, on_reply]() { server->on_get(me, key, on_reply); });
  } else {
    net_.send(pid_, server->pid(), MessageKind::GetVersion,
              [server, me, key, on_reply]() { server->on_get_version(me, key, on_reply); });
  }
}

void KvClient::arm_read_timer(const std::shared_ptr<ReadRound>& round) {
  net_.scheduler().after(quorum_.timeout, [this, round, started = round->round]() {
    if (round->finished || round->round != started) return;
    if (round->replies >= round->required) {
      round->finished = true;
      round->done(GetResult{true, round->merged});
      return;
    }
    if (round->round == 1) {
      // Second round: re-ask every server that has not answered, in id order.
      round->round = 2;
      for (std::size_t s = 0; s < servers_.size(); ++s) {
        if (!round->responded[s]) send_read(round, s);
      }
      arm_read_timer(round);
      return;
    }
    round->finished = true;
    round->done(GetResult{false, round->merged});
  });
}

void KvClient::write(const std::string& key, const Version& version, std::string value,
                     std::function<void(bool)> done) {
  auto round = std::make_shared<WriteRound>();
  round->key = key;
  round->version = version;
  round->value = std::move(value);
  round->required = quorum_.w;
  round->contacted.assign(servers_.size(), false);
  round->responded.assign(servers_.size(), false);
  round->done = std::move(done);
  for (std::size_t s = 0; s < servers_.size(); ++s) send_write(round, s);
  arm_write_timer(round);
}

void KvClient::send_write(const std::shared_ptr<WriteRound>& round, std::size_t s) {
  round->contacted[s] = true;
  KvServer* server = servers_[s];
  auto on_ack = [this, round, s]() {
    if (round->finished || round->responded[s]) return;
    round->responded[s] = true;
    ++round->acks;
    const bool enough = round->acks >= round->required;
    const bool all = round->acks == static_cast<int>(servers_.size());
    if ((completion_ == Completion::Quorum && enough) || all) {
      round->finished = true;
      round->done(enough);
    }
  };
  const ProcessId me = pid_;
  net_.send(pid_, server->pid(), MessageKind::Put,
            [server, me, key = round->key, version = round->version, value = round->value,
             on_ack]() { server->on_put(me, key, version, value, on_ack); });
}

void KvClient::arm_write_timer(const std::shared_ptr<WriteRound>& round) {
  net_.scheduler().after(quorum_.timeout, [this, round, started = round->round]() {
    if (round->finished || round->round != started) return;
    if (round->acks >= round->required) {
      round->finished = true;
      round->done(true);
      return;
    }
    if (round->round == 1) {
      round->round = 2;
      for (std::size_t s = 0; s < servers_.size(); ++s) {
        if (!round->responded[s]) send_write(round, s);
      }
      arm_write_timer(round);
      return;
    }
    round->finished = true;
    round->done(false);
  });
}

}  // namespace kvmon
