#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "kvmon/simnet.hpp"

using namespace kvmon;

TEST_CASE("latency samples") {
  std::mt19937_64 rng(1);
  LatencyModel model(3, LinkLatency::fixed(from_ms(2)), LinkLatency::fixed(from_ms(50)));
  CHECK(model.sample(0, 0, rng) == from_ms(2));
  CHECK(model.sample(0, 2, rng) == from_ms(50));
  CHECK_THROWS_AS(model.sample(0, 3, rng), std::out_of_range);

  model.set_link(1, 2, LinkLatency::with_default_jitter(from_ms(40)));
  CHECK(model.link(2, 1).gamma_scale == doctest::Approx(4000.0));
  std::mt19937_64 r1(9), r2(9);
  CHECK(model.sample(1, 2, r1) == model.sample(1, 2, r2));

  // Mean of the jittered link: base + shape * scale.
  std::mt19937_64 r3(5);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) sum += static_cast<double>(model.sample(1, 2, r3));
  CHECK(sum / 20000 == doctest::Approx(model.link(1, 2).mean()).epsilon(0.01));
}

TEST_CASE("scheduler runs in time order") {
  Scheduler s;
  CHECK(s.run() == 0);

  std::vector<int> order;
  s.at(5, [&] { order.push_back(1); });
  CHECK(s.run() == 1);
  CHECK(s.now() == 5);

  s.at(9, [&] { order.push_back(3); });
  s.at(7, [&] {
    order.push_back(2);
    s.after(1, [&] { order.push_back(4); });
  });
  s.at(9, [&] { order.push_back(5); });
  CHECK(s.run_until(8) == 2);
  CHECK(s.now() == 8);
  s.run();
  CHECK(order == std::vector<int>{1, 2, 4, 3, 5});
  CHECK_THROWS_AS(s.at(1, [] {}), std::logic_error);
}

namespace {

std::uint64_t ping_pong_hash(std::uint64_t seed, std::vector<int>* arrivals = nullptr) {
  Scheduler s;
  LatencyModel model(2, LinkLatency::with_default_jitter(2000),
                     LinkLatency::with_default_jitter(40000));
  Network net(s, model, seed);
  const ProcessId a = net.add_process(0, "a");
  const ProcessId b = net.add_process(1, "b");
  for (int i = 0; i < 50; ++i) {
    s.at(i * 10, [&, i] {
      net.send(a, b, MessageKind::Put, [&, i] {
        if (arrivals) arrivals->push_back(i);
      });
    });
  }
  s.run();
  return net.trace_hash() ^ s.trace_hash();
}

}  // namespace

TEST_CASE("network determinism and FIFO") {
  std::vector<int> arrivals;
  const auto h1 = ping_pong_hash(3, &arrivals);
  CHECK(h1 == ping_pong_hash(3));
  CHECK(h1 != ping_pong_hash(4));
  REQUIRE(arrivals.size() == 50);
  for (int i = 0; i < 50; ++i) CHECK(arrivals[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("network clocks and partitions") {
  Scheduler s;
  Network net(s, LatencyModel(2, LinkLatency::fixed(10), LinkLatency::fixed(100)), 1);
  const ProcessId a = net.add_process(0, "a");
  const ProcessId b = net.add_process(1, "b");
  net.add_partition({0, 1, 50, 200});

  HybridVectorClock seen;
  CHECK(net.send(a, b, MessageKind::Get, [&] { seen = net.clock(b); }));
  s.run();
  CHECK(s.now() == 100);
  CHECK(seen[b] == 100);
  CHECK(seen[a] == net.clock(a)[a]);
  CHECK(compare(net.clock(a), net.clock(b)) == CausalRelation::Before);

  s.at(110, [&] { CHECK_FALSE(net.send(b, a, MessageKind::GetReply, [] {})); });
  s.at(250, [&] { CHECK(net.send(b, a, MessageKind::GetReply, [] {})); });
  s.run();
  CHECK(net.dropped() == 1);
  CHECK(net.sent(MessageKind::GetReply) == 2);
}
