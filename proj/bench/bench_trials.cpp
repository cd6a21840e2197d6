// Serial reference vs OpenMP for the two data-parallel loops: independent
// experiment trials and the randomized oracle sweep.

#include <benchmark/benchmark.h>

#include "kvmon/harness.hpp"
#include "../tests/trace_gen.hpp"

using namespace kvmon;

namespace {

ExperimentConfig trial_config(int trials) {
  ExperimentConfig c;
  c.name = "bench";
  c.trials = trials;
  c.duration = 10 * kMicrosPerSecond;
  c.regions = 3;
  c.intra_rtt = kMicrosPerMilli;
  c.cross_rtt = {20 * kMicrosPerMilli};
  c.quorum = QuorumConfig{3, 1, 1};
  c.workload = WorkloadKind::Weather;
  c.clients = 4;
  c.graph = GraphKind::Grid;
  c.nodes = 100;
  c.graph_app.strategy.kind = StrategyKind::Backoff;
  c.graph_app.lock.poll_interval = c.intra_rtt;
  return c;
}

void BM_TrialsSerial(benchmark::State& state) {
  const ExperimentConfig cfg = trial_config(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_trials_serial(cfg));
}

void BM_TrialsParallel(benchmark::State& state) {
  const ExperimentConfig cfg = trial_config(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_trials_parallel(cfg));
}

void BM_OracleSweepSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(testing::oracle_sweep_serial(PredicateKind::Semilinear, n, 1));
  }
}

void BM_OracleSweepParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(testing::oracle_sweep_parallel(PredicateKind::Semilinear, n, 1));
  }
}

}  // namespace

BENCHMARK(BM_TrialsSerial)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_TrialsParallel)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_OracleSweepSerial)->Arg(1000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_OracleSweepParallel)->Arg(1000)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
