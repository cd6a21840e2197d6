#include <memory>
#include <stdexcept>

#include "doctest.h"
#include "kvmon/detection.hpp"
#include "trace_gen.hpp"

using namespace kvmon;

namespace {

VersionedValue versions(std::initializer_list<std::pair<Version, std::string>> vs) {
  VersionedValue out;
  for (const auto& [v, value] : vs) out.put(v, value);
  return out;
}

Candidate cand(std::size_t owner, std::vector<Timestamp> start, std::vector<Timestamp> end,
               std::map<std::string, VersionedValue> state = {}, const std::string& pred = "p") {
  Candidate c;
  c.predicate = pred;
  c.server = owner;
  c.interval = HvcInterval(HybridVectorClock(owner, std::move(start)),
                           HybridVectorClock(owner, std::move(end)));
  c.state = std::move(state);
  return c;
}

std::vector<const Candidate*> ptrs(const std::vector<Candidate>& cs) {
  std::vector<const Candidate*> out;
  for (const auto& c : cs) out.push_back(&c);
  return out;
}

const VersionedValue kTrue = versions({{Version{{0, 1}}, "true"}});
const VersionedValue kFalse = versions({{Version{{0, 1}}, "false"}});

}  // namespace

TEST_CASE("eval_predicate") {
  const PredicateSpec mutex = edge_mutex_spec(1, 2);
  const auto turn_both = versions({{Version{{0, 1}}, "1"}, {Version{{1, 1}}, "2"}});
  std::vector<Candidate> diverged{
      cand(0, {0, 0}, {1, 0}, {{"flag1_2_1", kTrue}, {"turn1_2", turn_both}}),
      cand(1, {0, 0}, {0, 1}, {{"flag1_2_2", kTrue}})};
  CHECK(eval_predicate(ptrs(diverged), mutex));

  std::vector<Candidate> off{cand(0, {0, 0}, {1, 0},
                                  {{"flag1_2_1", kFalse}, {"flag1_2_2", kFalse}, {"turn1_2", turn_both}})};
  CHECK_FALSE(eval_predicate(ptrs(off), mutex));

  const PredicateSpec fig{"fig", PredicateKind::Semilinear, {{{"x2", "1"}, {"y2", "1"}}, {{"z2", "1"}}}};
  std::vector<Candidate> z{cand(0, {0}, {1}, {{"z2", versions({{Version{{0, 1}}, "1"}})}})};
  CHECK(eval_predicate(ptrs(z), fig));
  CHECK_FALSE(eval_predicate({}, fig));
}

TEST_CASE("violation start is the earliest interval start") {
  std::vector<Candidate> ev{cand(0, {5, 0}, {9, 0}), cand(1, {0, 3}, {0, 12})};
  CHECK(violation_start(ev) == 3);
  Candidate f;
  f.interval = HvcInterval(HybridVectorClock(0, {10, 8}, 4), HybridVectorClock(0, {20, 16}, 4));
  CHECK(violation_start({f}) == 6);
}

TEST_CASE("candidate wire round trip") {
  Candidate c = cand(1, {3, 4, 0}, {5, 9, 2},
                     {{"turn1_2", versions({{Version{{0, 1}}, "1"}, {Version{{1, 2}}, "2"}})}},
                     "mutex1_2");
  const Candidate d = decode_candidate(encode_candidate(c));
  CHECK(d.predicate == c.predicate);
  CHECK(d.server == 1);
  CHECK(d.interval.start == c.interval.start);
  CHECK(d.interval.end == c.interval.end);
  REQUIRE(d.state.size() == 1);
  CHECK(d.state.at("turn1_2").size() == 2);
  CHECK(d.state.at("turn1_2").has_value("2"));

  Candidate e;
  e.interval = HvcInterval(HybridVectorClock(0, {10, 8}, 4), HybridVectorClock(0, {20, 16}, 4));
  CHECK(decode_candidate(encode_candidate(e)).interval.end == e.interval.end);
}

TEST_CASE("local detector emission rules") {
  PredicateRegistry reg(1);
  Placement pl(2);
  pl.set("x", 0);
  pl.set("y", 1);
  reg.declare(PredicateSpec{"conj", PredicateKind::Linear, {{{"x", "true"}, {"y", "true"}}}});
  std::vector<Candidate> out;
  LocalDetector d(0, reg, pl, [&](Candidate c) { out.push_back(std::move(c)); });
  ServerState st;
  st.id = 0;
  st.hook = [&](const ServerState& pre, const std::string& key, const HybridVectorClock& now) {
    d.on_put(pre, key, now);
  };
  auto clk = [](Timestamp t) { return HybridVectorClock(0, {t, 0}); };

  // Local part false before the first write: nothing to send.
  server_put(st, "x", Version{{0, 1}}, "true", clk(1));
  CHECK(out.empty());
  // Local part held since t=1; a candidate goes out even though it becomes false now.
  server_put(st, "x", Version{{0, 2}}, "false", clk(4));
  REQUIRE(out.size() == 1);
  CHECK(out[0].interval.start.own_time() == 1);
  CHECK(out[0].interval.end.own_time() == 4);
  CHECK(out[0].state.at("x").has_value("true"));
  CHECK_FALSE(out[0].state.contains("y"));
  server_put(st, "x", Version{{0, 3}}, "true", clk(6));
  CHECK(out.size() == 1);
  // Writes of variables homed elsewhere are not this server's business.
  server_put(st, "y", Version{{0, 1}}, "true", clk(7));
  CHECK(out.size() == 1);
  d.flush(st, clk(9));
  REQUIRE(out.size() == 2);
  CHECK(out[1].interval.start.own_time() == 6);

  // Semilinear: every relevant write sends one candidate.
  PredicateRegistry reg2(1);
  std::vector<Candidate> out2;
  LocalDetector d2(0, reg2, pl, [&](Candidate c) { out2.push_back(std::move(c)); });
  ServerState st2;
  st2.hook = [&](const ServerState& pre, const std::string& key, const HybridVectorClock& now) {
    d2.on_put(pre, key, now);
  };
  server_put(st2, "flag1_2_1", Version{{0, 1}}, "true", clk(1));
  server_put(st2, "turn1_2", Version{{0, 1}}, "1", clk(2));
  server_put(st2, "color1", Version{{0, 1}}, "0", clk(3));
  server_put(st2, "flag1_2_1", Version{{0, 2}}, "false", clk(4));
  REQUIRE(out2.size() == 3);
  CHECK(out2[0].state.empty());
  CHECK(out2[2].interval.start.own_time() == 2);
  CHECK(out2[2].state.at("turn1_2").has_value("1"));
  CHECK(out2[2].state.at("flag1_2_1").has_value("true"));
}

TEST_CASE("make_consistent") {
  GlobalState gs({0, 1});
  gs.enqueue(cand(0, {1, 0}, {2, 0}));
  gs.enqueue(cand(1, {0, 1}, {0, 3}));
  CHECK(make_consistent(gs));
  CHECK(gs.queues[0].size() == 1);

  // Server 0's held candidate ended before server 1's began.
  GlobalState stale({0, 1});
  stale.enqueue(cand(0, {1, 0}, {2, 0}));
  stale.enqueue(cand(0, {2, 0}, {8, 0}));
  stale.enqueue(cand(1, {3, 4}, {3, 6}));
  CHECK(make_consistent(stale));
  CHECK(stale.queues[0].size() == 1);
  CHECK(stale.queues[0].front().interval.end.own_time() == 8);

  GlobalState starved({0, 1});
  starved.enqueue(cand(0, {1, 0}, {2, 0}));
  starved.enqueue(cand(1, {3, 4}, {3, 6}));
  CHECK_FALSE(make_consistent(starved));
  CHECK(starved.queues[0].empty());
}

TEST_CASE("linear monitor on two servers") {
  const PredicateSpec conj{"conj", PredicateKind::Linear, {{{"x", "true"}, {"y", "true"}}}};
  {
    PredicateMonitor m(conj, {0, 1});
    CHECK(m.push(cand(0, {1, 0}, {5, 0}, {{"x", kTrue}}, "conj"), 10).empty());
    const auto r = m.push(cand(1, {0, 2}, {0, 6}, {{"y", kTrue}}, "conj"), 11);
    REQUIRE(r.size() == 1);
    CHECK(r[0].t_violate == 1);
    CHECK(r[0].detection_time == 11);
    CHECK(r[0].evidence.size() == 2);
  }
  {
    // The second interval starts after a message from the end of the first.
    PredicateMonitor m(conj, {0, 1});
    CHECK(m.push(cand(0, {1, 0}, {5, 0}, {{"x", kTrue}}, "conj"), 10).empty());
    CHECK(m.push(cand(1, {5, 7}, {5, 9}, {{"y", kTrue}}, "conj"), 11).empty());
  }
}

TEST_CASE("brute force oracle basics") {
  const Placement pl(1);
  const PredicateSpec single{"s", PredicateKind::Semilinear, {{{"a", "1"}}}};
  CHECK_FALSE(brute_force_detect(Trace{}, single, pl));
  Trace one{1, {{TraceEvent{TraceEvent::Kind::Write, "a", Version{{0, 1}}, "1", 0}}}};
  CHECK(brute_force_detect(one, single, pl));
  CHECK(replay_with_monitor(one, single, pl, 1) >= 1);

  Trace big;
  big.processes = 5;
  big.events.resize(5);
  CHECK_THROWS_AS(brute_force_detect(big, single, Placement(5)), std::length_error);
  Trace longp{1, {std::vector<TraceEvent>(7)}};
  CHECK_THROWS_AS(brute_force_detect(longp, single, pl), std::length_error);
}

TEST_CASE("serial and parallel oracle sweeps match") {
  for (PredicateKind k : {PredicateKind::Linear, PredicateKind::Semilinear}) {
    const auto serial = testing::oracle_sweep_serial(k, 120, 5);
    CHECK(serial == testing::oracle_sweep_parallel(k, 120, 5));
    CHECK(serial.agree == serial.cases);
  }
}

TEST_CASE("monitors agree with the exhaustive oracle") {
  std::mt19937_64 rng(99);
  int violated[2] = {0, 0};
  for (int kind = 0; kind < 2; ++kind) {
    for (int i = 0; i < 300; ++i) {
      auto c = kind == 0 ? testing::random_linear_case(rng) : testing::random_semilinear_case(rng);
      const bool oracle = brute_force_detect(c.trace, c.spec, c.placement);
      const bool monitor = replay_with_monitor(c.trace, c.spec, c.placement, rng()) > 0;
      REQUIRE(oracle == monitor);
      violated[kind] += oracle;
    }
  }
  // Both verdicts occur often enough to make the comparison meaningful.
  CHECK(violated[0] > 30);
  CHECK(violated[0] < 270);
  CHECK(violated[1] > 30);
  CHECK(violated[1] < 270);
}

namespace {

struct MonitoredCluster {
  Scheduler sched;
  Network net;
  PredicateRegistry registry;
  Placement placement;
  std::vector<std::unique_ptr<KvServer>> servers;
  std::vector<std::unique_ptr<KvClient>> clients;
  std::unique_ptr<Monitor> monitor;
  std::vector<std::unique_ptr<LocalDetector>> detectors;
  std::vector<ViolationReport> reports;

  MonitoredCluster(QuorumConfig q, std::size_t client_count)
      : net(sched, LatencyModel(3, LinkLatency::fixed(1000), LinkLatency::fixed(30000)), 1),
        registry(1),
        placement(3) {
    std::vector<ProcessId> sp, cp;
    for (RegionId r = 0; r < 3; ++r) sp.push_back(net.add_process(r, "server"));
    for (std::size_t c = 0; c < client_count; ++c) cp.push_back(net.add_process(c % 3, "client"));
    const ProcessId mp = net.add_process(0, "monitor");
    net.freeze();
    std::vector<KvServer*> raw;
    for (std::size_t s = 0; s < 3; ++s) {
      servers.push_back(std::make_unique<KvServer>(net, sp[s], s, ServiceTimes{}, null_metrics()));
      raw.push_back(servers.back().get());
    }
    for (std::size_t c = 0; c < client_count; ++c) {
      clients.push_back(std::make_unique<KvClient>(net, cp[c], static_cast<ClientId>(c), raw, q,
                                                   Completion::Quorum, null_metrics()));
    }
    monitor = std::make_unique<Monitor>(net, mp, 0, registry, placement, null_metrics());
    monitor->add_listener(cp[0], [this](const ViolationReport& r) { reports.push_back(r); });
    detectors = attach_detectors(net, raw, {monitor.get()}, registry, placement, null_metrics());
  }

  void put(std::size_t client, const std::string& key, const std::string& value) {
    clients[client]->put(key, value, [](bool) {});
  }
};

}  // namespace

TEST_CASE("diverged turn replicas raise the edge mutex violation") {
  MonitoredCluster c(QuorumConfig::parse("N3R1W1"), 2);
  // Both clients raise their flag and write turn at the same time.
  c.put(0, "flag1_2_1", "true");
  c.put(1, "flag1_2_2", "true");
  c.sched.run();
  c.put(0, "turn1_2", "1");
  c.put(1, "turn1_2", "2");
  // Replicas apply the two turn writes in different orders; releasing ends the
  // remaining intervals.
  c.sched.run();
  c.put(0, "flag1_2_1", "false");
  c.put(1, "flag1_2_2", "false");
  c.sched.run();
  REQUIRE_FALSE(c.reports.empty());
  const ViolationReport& r = c.reports.front();
  CHECK(r.predicate == "mutex1_2");
  std::vector<const Candidate*> ev;
  for (const auto& e : r.evidence) ev.push_back(&e);
  CHECK(pairwise_concurrent(ev));
  CHECK(eval_predicate(ev, edge_mutex_spec(1, 2)));
  CHECK(r.t_violate <= r.detection_time);

  // The monitor keeps going: a second round of the same race is reported again.
  const auto first = c.reports.size();
  c.put(0, "flag1_2_1", "true");
  c.put(1, "flag1_2_2", "true");
  c.sched.run();
  c.put(0, "turn1_2", "1");
  c.put(1, "turn1_2", "2");
  c.sched.run();
  c.put(0, "flag1_2_1", "false");
  c.put(1, "flag1_2_2", "false");
  c.sched.run();
  CHECK(c.reports.size() > first);
}

TEST_CASE("serialized lock use under sequential consistency is not reported") {
  MonitoredCluster c(QuorumConfig::parse("N3R1W3"), 2);
  for (int round = 0; round < 3; ++round) {
    for (std::size_t who = 0; who < 2; ++who) {
      const std::string me = who == 0 ? "1" : "2";
      const std::string flag = "flag1_2_" + me;
      c.put(who, flag, "true");
      c.sched.run();
      c.put(who, "turn1_2", me);
      c.sched.run();
      c.put(who, flag, "false");
      c.sched.run();
    }
  }
  CHECK(c.monitor->candidates() > 0);
  CHECK(c.reports.empty());
}

TEST_CASE("collected predicates restart cleanly") {
  MonitoredCluster c(QuorumConfig::parse("N3R1W1"), 2);
  c.put(0, "flag1_2_1", "true");
  c.sched.run();
  c.put(0, "flag1_2_1", "false");
  c.sched.run();
  CHECK(c.monitor->tracked() == 1);

  std::vector<std::string> removed;
  c.registry.gc_inactive(c.sched.now() + c.registry.idle_timeout() + 1, &removed);
  REQUIRE(removed == std::vector<std::string>{"mutex1_2"});
  for (const auto& name : removed) c.monitor->drop(name);
  CHECK(c.monitor->tracked() == 0);

  // Replay the divergent race after collection: still detected.
  c.sched.at(c.sched.now() + c.registry.idle_timeout() + 2, [&] {
    c.put(0, "flag1_2_1", "true");
    c.put(1, "flag1_2_2", "true");
  });
  c.sched.run();
  c.put(0, "turn1_2", "1");
  c.put(1, "turn1_2", "2");
  c.sched.run();
  c.put(0, "flag1_2_1", "false");
  c.put(1, "flag1_2_2", "false");
  c.sched.run();
  CHECK_FALSE(c.reports.empty());
  CHECK(c.monitor->tracked() == 1);
}
