// Command line front end: run an experiment config, compare two metric
// CSVs, or emit a generated graph.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "kvmon/harness.hpp"

using namespace kvmon;

namespace {

int cmd_run(const std::string& path, const std::string& out_dir, int trials, bool parallel) {
  ExperimentConfig cfg = load_config(path);
  if (trials > 0) cfg.trials = trials;
  if (parallel) cfg.parallel = true;
  const auto records = run_experiment(cfg);
  for (const std::string& f : write_outputs(out_dir, cfg, records)) std::cout << f << '\n';
  for (std::size_t t = 0; t < records.size(); ++t) {
    const MetricsRecord& r = records[t];
    std::cout << "trial " << t + 1 << ": end " << to_ms(r.end_time) / 1000.0 << " s";
    try {
      const StableSummary s = stable_phase_metrics(r, cfg.warmup);
      std::cout << ", app " << s.app_ops_per_s << " ops/s, server " << s.server_ops_per_s << " ops/s";
    } catch (const std::invalid_argument&) {
      std::cout << ", too short for a stable phase";
    }
    std::cout << ", detections " << r.detections.size() << ", aborts " << r.aborts << ", progress "
              << r.total_progress() << ", co-occupancy " << r.co_occupancy;
    if (r.completion_time) std::cout << ", completed at " << to_ms(*r.completion_time) / 1000.0 << " s";
    if (cfg.workload == WorkloadKind::Coloring) {
      if (auto t90 = r.time_to_progress(r.graph_nodes * 9 / 10)) {
        std::cout << ", 90% at " << to_ms(*t90) / 1000.0 << " s";
      }
      std::cout << ", proper " << r.proper_coloring;
    }
    std::cout << '\n';
  }
  return 0;
}

std::pair<double, double> stable_means(const std::string& path, double warmup) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto rows = read_csv(in);
  const auto skip = static_cast<std::size_t>(static_cast<double>(rows.size()) * warmup);
  if (rows.size() <= skip) throw std::invalid_argument(path + " is shorter than the warm-up");
  double server = 0, app = 0;
  for (std::size_t i = skip; i < rows.size(); ++i) {
    server += rows[i].server_ops;
    app += rows[i].app_ops;
  }
  const auto n = static_cast<double>(rows.size() - skip);
  return {server / n, app / n};
}

int cmd_compare(const std::string& a, const std::string& b, double warmup) {
  const auto [sa, aa] = stable_means(a, warmup);
  const auto [sb, ab] = stable_means(b, warmup);
  std::cout << "A: server " << sa << " ops/s, app " << aa << " ops/s\n";
  std::cout << "B: server " << sb << " ops/s, app " << ab << " ops/s\n";
  std::cout << "overhead (server, A base): " << overhead(sa, sb) * 100.0 << " %\n";
  std::cout << "benefit (app, B base): " << benefit(aa, ab) * 100.0 << " %\n";
  return 0;
}

int cmd_gen_graph(const std::string& kind, std::size_t n, std::uint64_t seed, std::size_t clients,
                  const std::string& edges_path, const std::string& owners_path) {
  WorkGraph g = gen_graph(parse_graph_kind(kind), n, seed);
  assign_owners(g, clients);
  if (edges_path.empty()) {
    write_edge_list(std::cout, g);
  } else {
    std::ofstream out(edges_path);
    write_edge_list(out, g);
  }
  if (!owners_path.empty()) {
    std::ofstream out(owners_path);
    write_owners(out, g);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kvmon: replicated store, predicate monitors and rollback experiments"};
  app.require_subcommand(1);

  std::string config, out_dir = "out";
  int trials = 0;
  bool parallel = false;
  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config, "INI config file")->required();
  run->add_option("-o,--out", out_dir, "output directory");
  run->add_option("-t,--trials", trials, "override the trial count");
  run->add_flag("-p,--parallel", parallel, "run trials in parallel");

  std::string rec_a, rec_b;
  double warmup = 0.2;
  auto* compare = app.add_subcommand("compare", "overhead and benefit of two metric CSVs");
  compare->add_option("recordA", rec_a, "baseline CSV")->required();
  compare->add_option("recordB", rec_b, "other CSV")->required();
  compare->add_option("-w,--warmup", warmup, "warm-up share to drop");

  std::string kind, edges_path, owners_path;
  std::size_t n = 0, clients = 1;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-graph", "generate a work graph");
  gen->add_option("kind", kind, "regular | powerlaw | line | grid")->required();
  gen->add_option("n", n, "node count")->required();
  gen->add_option("seed", seed, "generator seed")->required();
  gen->add_option("-c,--clients", clients, "clients for the ownership map");
  gen->add_option("-e,--edges", edges_path, "edge list output (default stdout)");
  gen->add_option("--owners", owners_path, "ownership map output");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, out_dir, trials, parallel);
    if (*compare) return cmd_compare(rec_a, rec_b, warmup);
    if (*gen) return cmd_gen_graph(kind, n, seed, clients, edges_path, owners_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
