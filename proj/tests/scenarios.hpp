#pragma once

// Small deployments shared by the unit tests and the acceptance binary.

#include "kvmon/harness.hpp"

namespace kvmon::testing {

/// Two clients in different regions each own one end of a single edge and
/// start at the same instant. Under N3R1W1 each reads its own replica before
/// the peer's flag arrives, so both enter the critical section.
inline ExperimentConfig two_client_edge(QuorumConfig q) {
  ExperimentConfig c;
  c.name = "edge";
  c.duration = 2 * kMicrosPerSecond;
  c.stop_when_done = false;
  c.servers = 3;
  c.quorum = q;
  c.regions = 3;
  c.intra_rtt = kMicrosPerMilli;
  c.cross_rtt = {100 * kMicrosPerMilli};
  c.jitter = 0.0;
  c.workload = WorkloadKind::Coloring;
  c.clients = 2;
  c.graph = GraphKind::Line;
  c.nodes = 2;
  c.graph_app.task_size = 1;
  c.graph_app.lock.poll_interval = c.intra_rtt;
  return c;
}

/// Conjunctive stress at intra-region latencies: one group of two clients.
inline ExperimentConfig conjunctive_local(double beta, Timestamp duration) {
  ExperimentConfig c;
  c.name = "conj";
  c.duration = duration;
  c.servers = 3;
  c.quorum = QuorumConfig{3, 1, 1};
  c.regions = 1;
  c.intra_rtt = kMicrosPerMilli;
  c.cross_rtt = {kMicrosPerMilli};
  c.workload = WorkloadKind::Conjunctive;
  c.clients = 2;
  c.conjunctive.beta = beta;
  return c;
}

}  // namespace kvmon::testing
