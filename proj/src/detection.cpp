#include "kvmon/detection.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace kvmon {

using json = nlohmann::json;

namespace {

bool term_holds(const std::vector<const Candidate*>& states, const Term& t) {
  return std::any_of(states.begin(), states.end(), [&](const Candidate* c) {
    auto it = c->state.find(t.variable);
    return it != c->state.end() && it->second.has_value(t.value);
  });
}

bool concurrent(const Candidate& a, const Candidate& b) {
  return interval_relation(a.interval, b.interval) == CausalRelation::Concurrent;
}

}  // namespace

bool eval_predicate(const std::vector<const Candidate*>& states, const PredicateSpec& spec) {
  return std::any_of(spec.clauses.begin(), spec.clauses.end(), [&](const Clause& clause) {
    return std::all_of(clause.begin(), clause.end(),
                       [&](const Term& t) { return term_holds(states, t); });
  });
}

bool pairwise_concurrent(const std::vector<const Candidate*>& states) {
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t j = i + 1; j < states.size(); ++j) {
      if (!concurrent(*states[i], *states[j])) return false;
    }
  }
  return true;
}

Timestamp violation_start(const std::vector<Candidate>& evidence) {
  Timestamp start = std::numeric_limits<Timestamp>::max();
  for (const Candidate& c : evidence) {
    Timestamp t = c.interval.start.own_time();
    const Timestamp eps = c.interval.start.epsilon();
    if (!is_infinite(eps)) t -= eps;
    start = std::min(start, t);
  }
  return evidence.empty() ? 0 : start;
}

namespace {

json clock_to_json(const HybridVectorClock& c) {
  const CompactHvc compact = compact_encode(c);
  return json{{"owner", compact.owner},
              {"pt", c.own_time()},
              {"bits", compact.bits},
              {"explicit", compact.explicit_entries},
              {"eps", compact.degenerate ? json(nullptr) : json(compact.epsilon)}};
}

HybridVectorClock clock_from_json(const json& j) {
  CompactHvc compact;
  compact.owner = j.at("owner").get<std::size_t>();
  compact.bits = j.at("bits").get<std::string>();
  compact.explicit_entries = j.at("explicit").get<std::vector<Timestamp>>();
  compact.degenerate = j.at("eps").is_null();
  compact.epsilon = compact.degenerate ? kInfiniteEpsilon : j.at("eps").get<Timestamp>();
  return compact_decode(compact, j.at("pt").get<Timestamp>());
}

}  // namespace

std::string encode_candidate(const Candidate& c) {
  json vars = json::object();
  for (const auto& [name, vv] : c.state) {
    json versions = json::array();
    for (const auto& e : vv.entries()) {
      json counters = json::array();
      for (const auto& [client, n] : e.version.counters()) counters.push_back({client, n});
      versions.push_back({{"version", counters}, {"value", e.value}});
    }
    vars[name] = versions;
  }
  json j{{"predicate", c.predicate},
         {"server", c.server},
         {"start", clock_to_json(c.interval.start)},
         {"end", clock_to_json(c.interval.end)},
         {"state", vars}};
  return j.dump();
}

Candidate decode_candidate(const std::string& wire) {
  const json j = json::parse(wire);
  Candidate c;
  c.predicate = j.at("predicate").get<std::string>();
  c.server = j.at("server").get<std::size_t>();
  c.interval = HvcInterval(clock_from_json(j.at("start")), clock_from_json(j.at("end")));
  for (const auto& [name, versions] : j.at("state").items()) {
    VersionedValue vv;
    for (const auto& e : versions) {
      Version v;
      for (const auto& pair : e.at("version")) {
        const auto client = pair.at(0).get<ClientId>();
        for (auto n = pair.at(1).get<std::uint64_t>(); n > 0; --n) v.increment(client);
      }
      vv.put(v, e.at("value").get<std::string>());
    }
    c.state.emplace(name, std::move(vv));
  }
  return c;
}

GlobalState::GlobalState(std::vector<std::size_t> participants, std::size_t limit)
    : servers(std::move(participants)), queue_limit(limit) {
  for (std::size_t s : servers) queues[s];
}

void GlobalState::enqueue(Candidate c) {
  auto& q = queues[c.server];
  q.push_back(std::move(c));
  if (q.size() > queue_limit) {
    q.pop_front();
    ++dropped;
  }
}

std::vector<const Candidate*> GlobalState::held() const {
  std::vector<const Candidate*> out;
  for (std::size_t s : servers) {
    const auto& q = queues.at(s);
    if (!q.empty()) out.push_back(&q.front());
  }
  return out;
}

bool make_consistent(GlobalState& gs) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i : gs.servers) {
      auto& qi = gs.queues[i];
      if (qi.empty()) continue;
      for (std::size_t j : gs.servers) {
        if (i == j) continue;
        const auto& qj = gs.queues[j];
        if (qj.empty()) continue;
        // The held state of i ended before j's began: no cut can contain it.
        if (interval_relation(qi.front().interval, qj.front().interval) ==
            CausalRelation::Before) {
          qi.pop_front();
          changed = true;
          break;
        }
      }
    }
  }
  return std::all_of(gs.servers.begin(), gs.servers.end(),
                     [&](std::size_t s) { return !gs.queues[s].empty(); });
}

std::optional<ViolationReport> monitor_step_linear(GlobalState& gs, const PredicateSpec& spec,
                                                   Timestamp now) {
  if (gs.servers.empty()) return std::nullopt;
  while (make_consistent(gs)) {
    const auto held = gs.held();
    if (eval_predicate(held, spec)) {
      ViolationReport report;
      report.predicate = spec.name;
      for (const Candidate* c : held) report.evidence.push_back(*c);
      report.t_violate = violation_start(report.evidence);
      report.detection_time = now;
      // Step past the candidate whose interval ends first.
      std::size_t next = gs.servers.front();
      Timestamp earliest = std::numeric_limits<Timestamp>::max();
      for (std::size_t s : gs.servers) {
        const Timestamp end = gs.queues[s].front().interval.end.own_time();
        if (end < earliest) {
          earliest = end;
          next = s;
        }
      }
      gs.queues[next].pop_front();
      return report;
    }
    // Forbidden state: a held candidate whose own terms do not hold.
    std::size_t forbidden = gs.servers.front();
    for (std::size_t s : gs.servers) {
      const Candidate& c = gs.queues[s].front();
      const bool local_false = std::any_of(
          spec.clauses.front().begin(), spec.clauses.front().end(), [&](const Term& t) {
            auto it = c.state.find(t.variable);
            return it != c.state.end() && !it->second.has_value(t.value);
          });
      if (local_false) {
        forbidden = s;
        break;
      }
    }
    gs.queues[forbidden].pop_front();
  }
  return std::nullopt;
}

SemilinearState::SemilinearState(std::vector<std::size_t> participants, std::size_t limit)
    : servers(std::move(participants)), queue_limit(limit) {
  for (std::size_t s : servers) retained[s];
}

namespace {

struct CutSearch {
  const SemilinearState& st;
  const PredicateSpec& spec;
  std::vector<std::size_t> others;
  std::vector<const Candidate*> chosen;

  // A candidate is worth adding only if it matches a term the cut lacks.
  bool useful(const Candidate& c) const {
    for (const Clause& clause : spec.clauses) {
      for (const Term& t : clause) {
        auto it = c.state.find(t.variable);
        if (it == c.state.end() || !it->second.has_value(t.value)) continue;
        if (!term_holds(chosen, t)) return true;
      }
    }
    return false;
  }

  bool search(std::size_t idx) {
    if (eval_predicate(chosen, spec)) return true;
    if (idx == others.size()) return false;
    for (const Candidate& c : st.retained.at(others[idx])) {
      if (!useful(c)) continue;
      const bool fits = std::all_of(chosen.begin(), chosen.end(),
                                    [&](const Candidate* x) { return concurrent(*x, c); });
      if (!fits) continue;
      chosen.push_back(&c);
      if (search(idx + 1)) return true;
      chosen.pop_back();
    }
    return search(idx + 1);
  }
};

void prune(SemilinearState& st) {
  if (st.latest.size() < st.servers.size()) return;
  for (std::size_t u : st.servers) {
    auto& q = st.retained[u];
    while (!q.empty()) {
      // Retained candidates end in order, so stale ones sit at the front.
      const bool stale = std::all_of(st.servers.begin(), st.servers.end(), [&](std::size_t v) {
        return v == u ||
               interval_relation(q.front().interval, st.latest.at(v)) == CausalRelation::Before;
      });
      if (!stale) break;
      q.pop_front();
      ++st.pruned;
    }
  }
}

}  // namespace

std::optional<ViolationReport> monitor_step_semilinear(SemilinearState& st, Candidate arrived,
                                                       const PredicateSpec& spec, Timestamp now) {
  const std::size_t s = arrived.server;
  auto found = st.retained.find(s);
  if (found == st.retained.end()) return std::nullopt;
  auto& q = found->second;
  q.push_back(std::move(arrived));
  if (q.size() > st.queue_limit) {
    q.pop_front();
    ++st.dropped;
  }
  st.latest[s] = q.back().interval;

  CutSearch search{st, spec, {}, {}};
  if (!search.useful(q.back())) {
    prune(st);
    return std::nullopt;
  }
  search.chosen.push_back(&q.back());
  for (std::size_t u : st.servers) {
    if (u != s) search.others.push_back(u);
  }
  std::optional<ViolationReport> report;
  if (search.search(0)) {
    report.emplace();
    report->predicate = spec.name;
    std::vector<const Candidate*> cut = search.chosen;
    std::sort(cut.begin(), cut.end(),
              [](const Candidate* a, const Candidate* b) { return a->server < b->server; });
    for (const Candidate* c : cut) report->evidence.push_back(*c);
    report->t_violate = violation_start(report->evidence);
    report->detection_time = now;
  }
  prune(st);
  return report;
}

PredicateMonitor::PredicateMonitor(PredicateSpec spec, std::vector<std::size_t> participants,
                                   std::size_t queue_limit)
    : spec_(std::move(spec)),
      linear_(spec_.kind == PredicateKind::Linear ? participants : std::vector<std::size_t>{},
              queue_limit),
      semilinear_(spec_.kind == PredicateKind::Semilinear ? participants
                                                          : std::vector<std::size_t>{},
                  queue_limit) {}

std::vector<ViolationReport> PredicateMonitor::push(Candidate c, Timestamp now) {
  std::vector<ViolationReport> out;
  if (spec_.kind == PredicateKind::Semilinear) {
    if (auto r = monitor_step_semilinear(semilinear_, std::move(c), spec_, now)) {
      out.push_back(std::move(*r));
    }
    return out;
  }
  if (!linear_.queues.contains(c.server)) return out;
  linear_.enqueue(std::move(c));
  while (auto r = monitor_step_linear(linear_, spec_, now)) out.push_back(std::move(*r));
  return out;
}

std::uint64_t PredicateMonitor::dropped() const {
  return spec_.kind == PredicateKind::Linear ? linear_.dropped : semilinear_.dropped;
}

LocalDetector::LocalDetector(std::size_t server, PredicateRegistry& registry,
                             const Placement& placement, CandidateSink sink)
    : server_(server), registry_(registry), placement_(placement), sink_(std::move(sink)) {}

HybridVectorClock LocalDetector::interval_start(const std::vector<std::string>& vars,
                                                const HybridVectorClock& now) const {
  const HybridVectorClock* latest = nullptr;
  for (const std::string& v : vars) {
    auto it = last_write_.find(v);
    if (it == last_write_.end()) continue;
    if (!latest || it->second.own_time() > latest->own_time()) latest = &it->second;
  }
  if (latest) return *latest;
  return HybridVectorClock::initial(now.owner(), now.size(), now.epsilon());
}

void LocalDetector::consider(const PredicateSpec& spec, const ServerState& pre,
                             const std::string* key, const HybridVectorClock& now) {
  std::vector<std::string> vars;
  if (spec.kind == PredicateKind::Linear) {
    if (key && placement_.home(*key) != server_) return;
    for (const std::string& v : spec.variables()) {
      if (placement_.home(v) == server_) vars.push_back(v);
    }
    // Only intervals in which the local conjuncts held are worth reporting.
    for (const Term& t : spec.clauses.front()) {
      if (placement_.home(t.variable) != server_) continue;
      const VersionedValue* vv = pre.find(t.variable);
      if (!vv || !vv->has_value(t.value)) return;
    }
  } else {
    vars = spec.variables();
  }
  if (vars.empty()) return;
  Candidate c;
  c.predicate = spec.name;
  c.server = server_;
  c.interval = HvcInterval(interval_start(vars, now), now);
  for (const std::string& v : vars) {
    if (const VersionedValue* vv = pre.find(v)) c.state.emplace(v, *vv);
  }
  ++emitted_;
  sink_(std::move(c));
}

void LocalDetector::on_put(const ServerState& pre, const std::string& key,
                           const HybridVectorClock& now) {
  const auto entries = registry_.on_write(key, now.own_time());
  if (entries.empty()) return;
  for (const auto* e : entries) {
    seen_.try_emplace(e->spec.name, e->spec);
    consider(e->spec, pre, &key, now);
  }
  last_write_.insert_or_assign(key, now);
}

void LocalDetector::flush(const ServerState& state, const HybridVectorClock& now) {
  for (const auto& [name, spec] : seen_) consider(spec, state, nullptr, now);
}

Monitor::Monitor(Network& net, ProcessId pid, std::size_t id, PredicateRegistry& registry,
                 const Placement& placement, MetricsSink& metrics, std::size_t queue_limit)
    : net_(net),
      pid_(pid),
      id_(id),
      registry_(registry),
      placement_(placement),
      metrics_(metrics),
      queue_limit_(queue_limit) {}

void Monitor::add_listener(ProcessId client, Listener on_report) {
  listeners_.emplace_back(client, std::move(on_report));
}

void Monitor::on_candidate(Candidate c) {
  ++candidates_;
  const Timestamp now = net_.scheduler().now();
  registry_.touch(c.predicate, now);
  const PredicateRegistry::Entry* entry = registry_.find(c.predicate);
  if (!entry) {
    ++ignored_;
    return;
  }
  auto it = monitors_.find(c.predicate);
  if (it == monitors_.end()) {
    it = monitors_
             .emplace(c.predicate, PredicateMonitor(entry->spec, participants(entry->spec, placement_),
                                                    queue_limit_))
             .first;
  }
  for (ViolationReport& r : it->second.push(std::move(c), now)) {
    r.monitor = id_;
    if (!reported_[r.predicate].insert(r.t_violate).second) {
      ++duplicates_;
      continue;
    }
    ++reports_;
    metrics_.detection(r);
    auto shared = std::make_shared<const ViolationReport>(std::move(r));
    for (const auto& [client, fn] : listeners_) {
      net_.send(pid_, client, MessageKind::Violation, [fn = fn, shared] { fn(*shared); });
    }
  }
}

void Monitor::drop(std::string_view predicate) {
  auto it = monitors_.find(predicate);
  if (it != monitors_.end()) monitors_.erase(it);
  auto seen = reported_.find(predicate);
  if (seen != reported_.end()) reported_.erase(seen);
}

std::vector<std::unique_ptr<LocalDetector>> attach_detectors(
    Network& net, const std::vector<KvServer*>& servers, const std::vector<Monitor*>& monitors,
    PredicateRegistry& registry, const Placement& placement, MetricsSink& metrics) {
  if (monitors.size() != registry.monitor_count()) {
    throw std::invalid_argument("attach_detectors: monitor count differs from the registry");
  }
  std::vector<std::unique_ptr<LocalDetector>> out;
  for (KvServer* server : servers) {
    const ProcessId from = server->pid();
    auto sink = [&net, &registry, &metrics, monitors, from](Candidate c) {
      const PredicateRegistry::Entry* e = registry.find(c.predicate);
      Monitor* m = monitors[e ? e->monitor : assign_monitor(c.predicate, monitors.size())];
      metrics.candidate(net.scheduler().now());
      net.send(from, m->pid(), MessageKind::Candidate,
               [m, c = std::move(c)]() mutable { m->on_candidate(std::move(c)); });
    };
    out.push_back(std::make_unique<LocalDetector>(server->id(), registry, placement, sink));
    LocalDetector* d = out.back().get();
    server->state().hook = [d](const ServerState& pre, const std::string& key,
                               const HybridVectorClock& now) { d->on_put(pre, key, now); };
  }
  return out;
}

namespace {

void check_oracle_bounds(const Trace& trace) {
  if (trace.processes > kOracleMaxProcesses || trace.events.size() != trace.processes) {
    throw std::length_error("trace exceeds the exhaustive oracle bounds");
  }
  for (const auto& evs : trace.events) {
    if (evs.size() > kOracleMaxEvents) {
      throw std::length_error("trace exceeds the exhaustive oracle bounds");
    }
  }
}

}  // namespace

bool brute_force_detect(const Trace& trace, const PredicateSpec& spec, const Placement& placement) {
  check_oracle_bounds(trace);
  const std::size_t n = trace.processes;
  if (n == 0) return false;

  // Number every event and build happened-before by reachability.
  std::vector<std::size_t> base(n + 1, 0);
  for (std::size_t p = 0; p < n; ++p) base[p + 1] = base[p] + trace.events[p].size();
  const std::size_t total = base[n];
  std::vector<std::vector<std::size_t>> succ(total);
  std::map<std::size_t, std::size_t> send_of;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < trace.events[p].size(); ++i) {
      if (i + 1 < trace.events[p].size()) succ[base[p] + i].push_back(base[p] + i + 1);
      if (trace.events[p][i].kind == TraceEvent::Kind::Send) {
        send_of[trace.events[p][i].message] = base[p] + i;
      }
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < trace.events[p].size(); ++i) {
      const TraceEvent& e = trace.events[p][i];
      if (e.kind != TraceEvent::Kind::Receive) continue;
      auto it = send_of.find(e.message);
      if (it == send_of.end()) throw std::invalid_argument("trace: receive without send");
      succ[it->second].push_back(base[p] + i);
    }
  }
  std::vector<std::vector<bool>> reach(total, std::vector<bool>(total, false));
  for (std::size_t s = 0; s < total; ++s) {
    std::vector<std::size_t> stack{s};
    while (!stack.empty()) {
      const std::size_t x = stack.back();
      stack.pop_back();
      for (std::size_t y : succ[x]) {
        if (!reach[s][y]) {
          reach[s][y] = true;
          stack.push_back(y);
        }
      }
    }
  }
  // State k of process p lies between event k-1 and event k.
  auto precedes = [&](std::size_t p, std::size_t a, std::size_t q, std::size_t b) -> bool {
    if (a >= trace.events[p].size() || b == 0) return false;
    return reach[base[p] + a][base[q] + b - 1];
  };

  // Contents of every local state, projected for linear specs.
  const auto vars = spec.variables();
  std::vector<std::vector<Candidate>> states(n);
  for (std::size_t p = 0; p < n; ++p) {
    ServerState table;
    auto snapshot = [&] {
      Candidate c;
      c.server = p;
      for (const std::string& v : vars) {
        if (spec.kind == PredicateKind::Linear && placement.home(v) != p) continue;
        if (const VersionedValue* vv = table.find(v)) c.state.emplace(v, *vv);
      }
      return c;
    };
    states[p].push_back(snapshot());
    const auto clock = HybridVectorClock::initial(0, 1);
    for (const TraceEvent& e : trace.events[p]) {
      if (e.kind == TraceEvent::Kind::Write) server_put(table, e.variable, e.version, e.value, clock);
      states[p].push_back(snapshot());
    }
  }

  std::vector<std::size_t> pick(n, 0);
  while (true) {
    bool ok = true;
    for (std::size_t p = 0; p < n && ok; ++p) {
      for (std::size_t q = 0; q < n && ok; ++q) {
        if (p != q && precedes(p, pick[p], q, pick[q])) ok = false;
      }
    }
    if (ok) {
      std::vector<const Candidate*> cut;
      for (std::size_t p = 0; p < n; ++p) cut.push_back(&states[p][pick[p]]);
      if (eval_predicate(cut, spec)) return true;
    }
    std::size_t p = 0;
    while (p < n && ++pick[p] == states[p].size()) pick[p++] = 0;
    if (p == n) return false;
  }
}

std::size_t replay_with_monitor(const Trace& trace, const PredicateSpec& spec,
                                const Placement& placement, std::uint64_t seed) {
  const std::size_t n = trace.processes;
  PredicateRegistry registry(1);
  registry.declare(spec);
  std::vector<std::deque<Candidate>> emitted(n);
  std::vector<ServerState> tables(n);
  std::vector<std::unique_ptr<LocalDetector>> detectors;
  std::vector<HybridVectorClock> clocks;
  for (std::size_t p = 0; p < n; ++p) {
    detectors.push_back(std::make_unique<LocalDetector>(p, registry, placement, [&, p](Candidate c) {
      if (c.predicate == spec.name) emitted[p].push_back(std::move(c));
    }));
    LocalDetector* d = detectors.back().get();
    tables[p].id = p;
    tables[p].hook = [d](const ServerState& pre, const std::string& key,
                         const HybridVectorClock& now) { d->on_put(pre, key, now); };
    clocks.push_back(HybridVectorClock::initial(p, n));
  }

  // Execute in a causally valid order: lowest process whose next event can run.
  std::vector<std::size_t> next(n, 0);
  std::map<std::size_t, HybridVectorClock> messages;
  Timestamp pt = 0;
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t p = 0; p < n; ++p) {
      if (next[p] == trace.events[p].size()) continue;
      const TraceEvent& e = trace.events[p][next[p]];
      if (e.kind == TraceEvent::Kind::Receive) {
        auto it = messages.find(e.message);
        if (it == messages.end()) continue;
        clocks[p] = on_receive(clocks[p], it->second, ++pt);
      } else {
        clocks[p] = advance_send(clocks[p], ++pt);
        if (e.kind == TraceEvent::Kind::Send) messages[e.message] = clocks[p];
        if (e.kind == TraceEvent::Kind::Write) {
          server_put(tables[p], e.variable, e.version, e.value, clocks[p]);
        }
      }
      ++next[p];
      progress = true;
      break;
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (next[p] != trace.events[p].size()) throw std::invalid_argument("trace: receive without send");
    clocks[p] = advance_send(clocks[p], ++pt);
    detectors[p]->flush(tables[p], clocks[p]);
  }

  PredicateMonitor monitor(spec, participants(spec, placement));
  std::mt19937_64 rng(seed);
  std::size_t reports = 0;
  while (true) {
    std::vector<std::size_t> ready;
    for (std::size_t p = 0; p < n; ++p) {
      if (!emitted[p].empty()) ready.push_back(p);
    }
    if (ready.empty()) break;
    const std::size_t p = ready[rng() % ready.size()];
    Candidate c = std::move(emitted[p].front());
    emitted[p].pop_front();
    reports += monitor.push(std::move(c), pt).size();
  }
  return reports;
}

}  // namespace kvmon
