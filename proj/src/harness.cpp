#include "kvmon/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

namespace kvmon {

WorkloadKind parse_workload_kind(std::string_view name) {
  if (name == "coloring") return WorkloadKind::Coloring;
  if (name == "weather") return WorkloadKind::Weather;
  if (name == "conjunctive") return WorkloadKind::Conjunctive;
  if (name == "kv") return WorkloadKind::Kv;
  throw std::invalid_argument("unknown workload: " + std::string(name));
}

std::string_view workload_kind_name(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::Coloring: return "coloring";
    case WorkloadKind::Weather: return "weather";
    case WorkloadKind::Conjunctive: return "conjunctive";
    case WorkloadKind::Kv: return "kv";
  }
  return "?";
}

// ---- config ----

void ExperimentConfig::validate() const {
  if (duration <= 0) throw std::invalid_argument("duration must be positive");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (warmup < 0.0 || warmup >= 1.0) throw std::invalid_argument("warmup must be in [0, 1)");
  if (servers < 1) throw std::invalid_argument("need at least one server");
  quorum.validate(static_cast<int>(servers));
  if (graph_app.strategy.kind == StrategyKind::Adaptive) {
    graph_app.strategy.sequential.validate(static_cast<int>(servers));
  }
  if (regions < 1) throw std::invalid_argument("need at least one region");
  const std::size_t pairs = regions * (regions - 1) / 2;
  if (regions > 1 && cross_rtt.size() != 1 && cross_rtt.size() != pairs) {
    throw std::invalid_argument("cross_rtt_ms needs 1 or " + std::to_string(pairs) + " values");
  }
  if (jitter < 0.0 || jitter > 1.0) throw std::invalid_argument("jitter must be in [0, 1]");
  if (monitor_region && *monitor_region >= regions) throw std::invalid_argument("monitor region out of range");
  if (clients < 1) throw std::invalid_argument("need at least one client");
  if (graph_app.task_size < 1) throw std::invalid_argument("task size must be positive");
  if (graph_app.put_ratio < 0.0 || graph_app.put_ratio > 1.0 || kv.put_ratio < 0.0 ||
      kv.put_ratio > 1.0) {
    throw std::invalid_argument("put ratio must be in [0, 1]");
  }
  if (conjunctive.beta < 0.0 || conjunctive.beta > 1.0) throw std::invalid_argument("beta must be in [0, 1]");
  if (conjunctive.group < 1) throw std::invalid_argument("group must be >= 1");
  if (gc_period <= 0) throw std::invalid_argument("gc period must be positive");
}

namespace {

LinkLatency one_way(Timestamp rtt, double jitter) {
  const Timestamp half = rtt / 2;
  if (jitter <= 0.0) return LinkLatency::fixed(half);
  const auto base = static_cast<Timestamp>(std::llround(static_cast<double>(half) * (1.0 - jitter)));
  return LinkLatency{base, 2.0, static_cast<double>(half) * jitter / 2.0};
}

}  // namespace

LatencyModel ExperimentConfig::latency_model() const {
  LatencyModel m(regions, one_way(intra_rtt, jitter), one_way(cross_rtt.front(), jitter));
  if (cross_rtt.size() > 1) {
    std::size_t k = 0;
    for (RegionId a = 0; a < regions; ++a) {
      for (RegionId b = a + 1; b < regions; ++b) m.set_link(a, b, one_way(cross_rtt.at(k++), jitter));
    }
  }
  return m;
}

Timestamp ExperimentConfig::rtt(RegionId a, RegionId b) const {
  return static_cast<Timestamp>(std::llround(2.0 * latency_model().link(a, b).mean()));
}

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"run", {"name", "duration_s", "trials", "seed", "parallel", "warmup", "stop_when_done"}},
      {"store", {"servers", "quorum", "completion", "timeout_ms", "read_us", "write_us", "epsilon_ms"}},
      {"network", {"regions", "intra_rtt_ms", "cross_rtt_ms", "jitter"}},
      {"monitors",
       {"enabled", "count", "region", "gc_period_s", "idle_timeout_s", "queue_limit"}},
      {"workload",
       {"kind", "clients", "graph", "nodes", "graph_seed", "degree", "attach", "triangle_p",
        "edge_file", "owner_file", "task_size", "interior_first", "put_ratio", "beta", "period_ms",
        "group", "keys", "poll_ms", "spin_timeout_s", "park_ms"}},
      {"livelock", {"strategy", "max_delay_ms", "cap", "threshold", "window_s", "sequential"}},
  };
  return keys;
}

Timestamp ms(double v) { return from_ms(v); }
Timestamp seconds(double v) { return static_cast<Timestamp>(std::llround(v * 1e6)); }

std::vector<Timestamp> parse_ms_list(const std::string& text) {
  std::vector<std::string> parts;
  boost::split(parts, text, boost::is_any_of(","));
  std::vector<Timestamp> out;
  for (std::string p : parts) {
    boost::trim(p);
    if (p.empty()) continue;
    out.push_back(ms(std::stod(p)));
  }
  if (out.empty()) throw std::invalid_argument("empty latency list");
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    auto it = known_keys().find(section);
    if (it == known_keys().end()) throw std::invalid_argument("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) {
        throw std::invalid_argument("config: unknown key " + section + "." + key);
      }
    }
  }

  ExperimentConfig c;
  auto get = [&](const char* path) { return tree.get_optional<std::string>(path); };

  try {
    if (auto v = get("run.name")) c.name = *v;
    if (auto v = get("run.duration_s")) c.duration = seconds(std::stod(*v));
    if (auto v = get("run.trials")) c.trials = std::stoi(*v);
    if (auto v = get("run.seed")) c.seed = std::stoull(*v);
    if (auto v = tree.get_optional<bool>("run.parallel")) c.parallel = *v;
    if (auto v = get("run.warmup")) c.warmup = std::stod(*v);
    if (auto v = tree.get_optional<bool>("run.stop_when_done")) c.stop_when_done = *v;

    if (auto v = get("store.servers")) c.servers = std::stoul(*v);
    if (auto v = get("store.quorum")) c.quorum = QuorumConfig::parse(*v);
    if (auto v = get("store.completion")) {
      if (*v == "quorum") {
        c.completion = Completion::Quorum;
      } else if (*v == "all") {
        c.completion = Completion::AllOrTimeout;
      } else {
        throw std::invalid_argument("unknown completion policy: " + *v);
      }
    }
    if (auto v = get("store.timeout_ms")) {
      c.quorum.timeout = ms(std::stod(*v));
      c.graph_app.strategy.sequential.timeout = c.quorum.timeout;
    }
    if (auto v = get("store.read_us")) c.service.read = std::stoll(*v);
    if (auto v = get("store.write_us")) c.service.write = std::stoll(*v);
    if (auto v = get("store.epsilon_ms")) {
      c.epsilon = (*v == "inf") ? kInfiniteEpsilon : ms(std::stod(*v));
    }

    if (auto v = get("network.regions")) c.regions = std::stoul(*v);
    if (auto v = get("network.intra_rtt_ms")) c.intra_rtt = ms(std::stod(*v));
    if (auto v = get("network.cross_rtt_ms")) c.cross_rtt = parse_ms_list(*v);
    if (auto v = get("network.jitter")) c.jitter = std::stod(*v);

    if (auto v = tree.get_optional<bool>("monitors.enabled")) c.monitors = *v;
    if (auto v = get("monitors.count")) c.monitor_count = std::stoul(*v);
    if (auto v = get("monitors.region")) {
      if (*v != "colocated") c.monitor_region = std::stoul(*v);
    }
    if (auto v = get("monitors.gc_period_s")) c.gc_period = seconds(std::stod(*v));
    if (auto v = get("monitors.idle_timeout_s")) c.idle_timeout = seconds(std::stod(*v));
    if (auto v = get("monitors.queue_limit")) c.queue_limit = std::stoul(*v);

    if (auto v = get("workload.kind")) c.workload = parse_workload_kind(*v);
    if (auto v = get("workload.clients")) c.clients = std::stoul(*v);
    if (auto v = get("workload.graph")) c.graph = parse_graph_kind(*v);
    if (auto v = get("workload.nodes")) c.nodes = std::stoul(*v);
    if (auto v = get("workload.graph_seed")) c.graph_seed = std::stoull(*v);
    if (auto v = get("workload.degree")) c.graph_params.degree = std::stoi(*v);
    if (auto v = get("workload.attach")) c.graph_params.attach = std::stoi(*v);
    if (auto v = get("workload.triangle_p")) c.graph_params.triangle_p = std::stod(*v);
    if (auto v = get("workload.edge_file")) c.edge_file = *v;
    if (auto v = get("workload.owner_file")) c.owner_file = *v;
    if (auto v = get("workload.task_size")) c.graph_app.task_size = std::stoul(*v);
    if (auto v = tree.get_optional<bool>("workload.interior_first")) c.graph_app.interior_first = *v;
    if (auto v = get("workload.put_ratio")) {
      c.graph_app.put_ratio = std::stod(*v);
      c.kv.put_ratio = c.graph_app.put_ratio;
    }
    if (auto v = get("workload.beta")) c.conjunctive.beta = std::stod(*v);
    if (auto v = get("workload.period_ms")) c.conjunctive.period = ms(std::stod(*v));
    if (auto v = get("workload.group")) c.conjunctive.group = std::stoul(*v);
    if (auto v = get("workload.keys")) c.kv.keys = std::stoul(*v);
    // The spin poll defaults to one intra-region round trip.
    c.graph_app.lock.poll_interval = c.intra_rtt;
    if (auto v = get("workload.poll_ms")) c.graph_app.lock.poll_interval = ms(std::stod(*v));
    if (auto v = get("workload.spin_timeout_s")) c.graph_app.lock.spin_timeout = seconds(std::stod(*v));
    if (auto v = get("workload.park_ms")) c.graph_app.park_delay = ms(std::stod(*v));

    if (auto v = get("livelock.strategy")) c.graph_app.strategy.kind = LivelockStrategy::parse_kind(*v);
    if (auto v = get("livelock.max_delay_ms")) c.graph_app.strategy.max_delay = ms(std::stod(*v));
    if (auto v = get("livelock.cap")) c.graph_app.strategy.backoff_cap = std::stoi(*v);
    if (auto v = get("livelock.threshold")) c.graph_app.strategy.threshold = std::stoi(*v);
    if (auto v = get("livelock.window_s")) c.graph_app.strategy.window = seconds(std::stod(*v));
    if (auto v = get("livelock.sequential")) {
      const Timestamp t = c.graph_app.strategy.sequential.timeout;
      c.graph_app.strategy.sequential = QuorumConfig::parse(*v);
      c.graph_app.strategy.sequential.timeout = t;
    }
  } catch (const pt::ptree_bad_data& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  } catch (const std::logic_error& e) {
    // stoi/stod failures and enum parse errors.
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  ExperimentConfig c = parse_config(in);
  // Graph files are relative to the config.
  const auto dir = std::filesystem::path(path).parent_path();
  if (!c.edge_file.empty() && std::filesystem::path(c.edge_file).is_relative()) {
    c.edge_file = (dir / c.edge_file).string();
  }
  if (!c.owner_file.empty() && std::filesystem::path(c.owner_file).is_relative()) {
    c.owner_file = (dir / c.owner_file).string();
  }
  return c;
}

// ---- metrics ----

MetricsRecord::Bucket& MetricsRecord::at(Timestamp t) {
  const auto i = static_cast<std::size_t>(std::max<Timestamp>(0, t) / kMicrosPerSecond);
  if (i >= buckets.size()) buckets.resize(i + 1);
  return buckets[i];
}

std::uint64_t MetricsRecord::total_progress() const {
  std::uint64_t n = 0;
  for (const auto& b : buckets) n += b.progress;
  return n;
}

std::optional<Timestamp> MetricsRecord::time_to_progress(std::uint64_t target) const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    n += buckets[i].progress;
    if (n >= target) return static_cast<Timestamp>(i + 1) * kMicrosPerSecond;
  }
  return std::nullopt;
}

void RecordingMetrics::detection(const ViolationReport& rep) {
  ++r_.at(rep.detection_time).detections;
  r_.detections.push_back({rep.predicate, rep.t_violate, rep.detection_time, rep.monitor});
}

void RecordingMetrics::violation(Timestamp t, const std::string& what) {
  ++r_.at(t).violations;
  r_.events.push_back({RunEvent::Kind::Violation, t, what, 0, 0});
}

void RecordingMetrics::abort(Timestamp t, std::size_t client, std::size_t task) {
  ++r_.at(t).aborts;
  r_.events.push_back({RunEvent::Kind::Abort, t, {}, client, task});
}

void RecordingMetrics::consistency_switch(Timestamp t, std::size_t client) {
  r_.events.push_back({RunEvent::Kind::Switch, t, {}, client, 0});
}

// ---- simulation ----

Simulation::Simulation(const ExperimentConfig& cfg, std::uint64_t seed, MetricsSink& metrics)
    : cfg_(cfg), metrics_(metrics) {
  cfg_.validate();
  net_ = std::make_unique<Network>(sched_, cfg_.latency_model(), seed, cfg_.epsilon);

  std::vector<ProcessId> server_pids, monitor_pids, client_pids;
  for (std::size_t i = 0; i < cfg_.servers; ++i) {
    server_pids.push_back(net_->add_process(i % cfg_.regions, "s" + std::to_string(i)));
  }
  const std::size_t monitor_count =
      cfg_.monitors ? (cfg_.monitor_count ? cfg_.monitor_count : cfg_.servers) : 0;
  for (std::size_t i = 0; i < monitor_count; ++i) {
    const RegionId r = cfg_.monitor_region ? *cfg_.monitor_region : (i % cfg_.servers) % cfg_.regions;
    monitor_pids.push_back(net_->add_process(r, "m" + std::to_string(i)));
  }
  for (std::size_t c = 0; c < cfg_.clients; ++c) {
    client_pids.push_back(net_->add_process(c % cfg_.regions, "c" + std::to_string(c)));
  }
  net_->freeze();

  registry_ = std::make_unique<PredicateRegistry>(std::max<std::size_t>(1, monitor_count),
                                                  cfg_.idle_timeout);
  placement_ = std::make_unique<Placement>(cfg_.servers);

  std::vector<KvServer*> server_ptrs;
  for (std::size_t i = 0; i < cfg_.servers; ++i) {
    servers_.push_back(std::make_unique<KvServer>(*net_, server_pids[i], i, cfg_.service, metrics_));
    server_ptrs.push_back(servers_.back().get());
  }
  std::vector<Monitor*> monitor_ptrs;
  for (std::size_t i = 0; i < monitor_count; ++i) {
    monitors_.push_back(std::make_unique<Monitor>(*net_, monitor_pids[i], i, *registry_, *placement_,
                                                  metrics_, cfg_.queue_limit));
    monitor_ptrs.push_back(monitors_.back().get());
  }

  if (cfg_.workload == WorkloadKind::Coloring || cfg_.workload == WorkloadKind::Weather) {
    if (!cfg_.edge_file.empty()) {
      std::ifstream in(cfg_.edge_file);
      if (!in) throw std::runtime_error("cannot open edge file " + cfg_.edge_file);
      graph_ = std::make_unique<WorkGraph>(read_edge_list(in));
    } else {
      graph_ = std::make_unique<WorkGraph>(
          gen_graph(cfg_.graph, cfg_.nodes, cfg_.graph_seed, cfg_.graph_params));
    }
    if (!cfg_.owner_file.empty()) {
      std::ifstream in(cfg_.owner_file);
      if (!in) throw std::runtime_error("cannot open owner file " + cfg_.owner_file);
      read_owners(in, *graph_);
      if (graph_->clients > cfg_.clients) throw std::invalid_argument("owner file names more clients than configured");
    } else {
      assign_owners(*graph_, cfg_.clients);
    }
  }

  if (cfg_.workload == WorkloadKind::Conjunctive) {
    const std::size_t g = cfg_.conjunctive.group;
    for (std::size_t first = 0; first < cfg_.clients; first += g) {
      std::vector<std::size_t> members;
      for (std::size_t c = first; c < std::min(cfg_.clients, first + g); ++c) members.push_back(c);
      const std::size_t group = first / g;
      for (std::size_t c : members) {
        // Home each local variable at the server of the client's region.
        std::size_t home = c % cfg_.servers;
        for (std::size_t s = 0; s < cfg_.servers; ++s) {
          if (s % cfg_.regions == c % cfg_.regions) {
            home = s;
            break;
          }
        }
        placement_->set(conjunctive_variable(group, c), home);
      }
      registry_->declare(conjunctive_spec(group, members));
    }
  }

  if (cfg_.monitors) {
    detectors_ = attach_detectors(*net_, server_ptrs, monitor_ptrs, *registry_, *placement_, metrics_);
  }

  cs_ = std::make_unique<CsTracker>(metrics_);
  for (std::size_t c = 0; c < cfg_.clients; ++c) {
    kv_clients_.push_back(std::make_unique<KvClient>(*net_, client_pids[c], static_cast<ClientId>(c),
                                                     server_ptrs, cfg_.quorum, cfg_.completion,
                                                     metrics_));
    const std::uint64_t cseed = seed * 1000003ULL + c * 7919ULL + 17;
    KvClient& kv = *kv_clients_.back();
    switch (cfg_.workload) {
      case WorkloadKind::Coloring:
      case WorkloadKind::Weather: {
        GraphAppOptions opt = cfg_.graph_app;
        opt.app = cfg_.workload == WorkloadKind::Coloring ? GraphApp::Coloring : GraphApp::Weather;
        apps_.push_back(std::make_unique<GraphClient>(sched_, kv, *graph_, c, opt, *cs_, metrics_, cseed));
        break;
      }
      case WorkloadKind::Conjunctive:
        apps_.push_back(std::make_unique<ConjunctiveClient>(sched_, kv, c, c / cfg_.conjunctive.group,
                                                            cfg_.conjunctive, cseed));
        break;
      case WorkloadKind::Kv:
        apps_.push_back(std::make_unique<KvLoadClient>(kv, cfg_.kv, cseed));
        break;
    }
  }
  for (auto& m : monitors_) {
    for (std::size_t c = 0; c < cfg_.clients; ++c) {
      AppClient* app = apps_[c].get();
      m->add_listener(client_pids[c], [app](const ViolationReport& r) { app->on_report(r); });
    }
  }
}

Simulation::~Simulation() = default;

void Simulation::schedule_gc() {
  sched_.after(cfg_.gc_period, [this] {
    std::vector<std::string> removed;
    registry_->gc_inactive(sched_.now(), &removed);
    for (const std::string& name : removed) {
      for (auto& m : monitors_) m->drop(name);
    }
    schedule_gc();
  });
}

bool Simulation::all_finished() const {
  if (cfg_.workload != WorkloadKind::Coloring) return false;
  return std::all_of(apps_.begin(), apps_.end(), [](const auto& a) { return a->finished(); });
}

Timestamp Simulation::run() {
  for (auto& a : apps_) {
    AppClient* app = a.get();
    sched_.at(0, [app] { app->start(); });
  }
  if (cfg_.monitors) schedule_gc();
  const bool terminating = cfg_.workload == WorkloadKind::Coloring && cfg_.stop_when_done;
  if (terminating) {
    auto check = std::make_shared<std::function<void()>>();
    *check = [this, weak = std::weak_ptr<std::function<void()>>(check)] {
      if (all_finished()) {
        sched_.stop_soon();
        return;
      }
      auto self = weak.lock();
      sched_.after(10 * kMicrosPerMilli, [self] { (*self)(); });
    };
    sched_.at(0, [check] { (*check)(); });
  }
  sched_.run_until(cfg_.duration);
  if (all_finished()) {
    Timestamp last = 0;
    for (const auto& a : apps_) last = std::max(last, a->finished_at().value_or(0));
    completion_ = last;
  }
  return sched_.now();
}

bool Simulation::proper_coloring() const {
  if (!graph_) return false;
  std::vector<std::int64_t> color(graph_->size(), -1);
  for (NodeId n = 0; n < graph_->size(); ++n) {
    VersionedValue merged;
    for (const auto& s : servers_) {
      if (const VersionedValue* v = s->state().find(color_key(n))) merged.absorb(*v);
    }
    std::set<std::string> values;
    for (const auto& e : merged.entries()) values.insert(e.value);
    if (values.size() != 1) return false;
    color[n] = std::stoll(*values.begin());
  }
  for (const auto& [a, b] : graph_->edges()) {
    if (color[a] == color[b]) return false;
  }
  return true;
}

void Simulation::summarize(MetricsRecord& r) const {
  r.completion_time = completion_;
  r.co_occupancy = cs_->co_occupancy();
  r.graph_nodes = graph_ ? graph_->size() : 0;
  r.aborts = 0;
  r.writes_in_aborted = 0;
  r.switched_clients = 0;
  for (const auto& a : apps_) {
    r.aborts += a->aborts();
    r.writes_in_aborted += a->writes_in_aborted();
    r.switched_clients += a->switched();
  }
  r.candidate_messages = net_->sent(MessageKind::Candidate);
  r.server_messages = 0;
  for (MessageKind k : {MessageKind::Get, MessageKind::GetReply, MessageKind::GetVersion,
                        MessageKind::GetVersionReply, MessageKind::Put, MessageKind::PutAck}) {
    r.server_messages += net_->sent(k);
  }
  r.scheduler_hash = sched_.trace_hash();
  if (cfg_.workload == WorkloadKind::Coloring) r.proper_coloring = proper_coloring();
}

MetricsRecord run_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  MetricsRecord r;
  r.seed = seed;
  RecordingMetrics metrics(r);
  Simulation sim(cfg, seed, metrics);
  r.end_time = sim.run();
  // Pad to the end of the run so idle tail seconds show up as zeros.
  if (r.end_time > 0) r.at(r.end_time - 1);
  sim.summarize(r);
  return r;
}

std::vector<MetricsRecord> run_trials_serial(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<MetricsRecord> out;
  for (int t = 0; t < cfg.trials; ++t) out.push_back(run_trial(cfg, cfg.seed + static_cast<std::uint64_t>(t)));
  return out;
}

std::vector<MetricsRecord> run_trials_parallel(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<MetricsRecord> out(static_cast<std::size_t>(cfg.trials));
  std::vector<std::exception_ptr> errors(out.size());
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < cfg.trials; ++t) {
    try {
      out[static_cast<std::size_t>(t)] = run_trial(cfg, cfg.seed + static_cast<std::uint64_t>(t));
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<MetricsRecord> run_experiment(const ExperimentConfig& cfg) {
  return cfg.parallel ? run_trials_parallel(cfg) : run_trials_serial(cfg);
}

// ---- summaries ----

StableSummary stable_phase_metrics(const MetricsRecord& r, double warmup) {
  if (warmup < 0.0 || warmup >= 1.0) throw std::invalid_argument("warmup must be in [0, 1)");
  const std::size_t full = std::min(r.buckets.size(), static_cast<std::size_t>(r.end_time / kMicrosPerSecond));
  const auto skip = static_cast<std::size_t>(std::floor(static_cast<double>(full) * warmup));
  if (full <= skip) throw std::invalid_argument("record is shorter than the warm-up");
  StableSummary s;
  s.windows = full - skip;
  for (std::size_t i = skip; i < full; ++i) {
    s.server_ops_per_s += static_cast<double>(r.buckets[i].server_ops);
    s.app_ops_per_s += static_cast<double>(r.buckets[i].app_ops);
    s.candidates_per_s += static_cast<double>(r.buckets[i].candidates);
    s.progress_per_s += static_cast<double>(r.buckets[i].progress);
  }
  const auto w = static_cast<double>(s.windows);
  s.server_ops_per_s /= w;
  s.app_ops_per_s /= w;
  s.candidates_per_s /= w;
  s.progress_per_s /= w;

  std::vector<double> lat;
  for (const auto& d : r.detections) lat.push_back(to_ms(d.detection_time - d.t_violate));
  std::sort(lat.begin(), lat.end());
  s.detections = lat.size();
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lat.size())));
    return lat[std::clamp<std::size_t>(k, 1, lat.size()) - 1];
  };
  if (!lat.empty()) {
    s.latency_p50_ms = rank(0.50);
    s.latency_p99_ms = rank(0.99);
    s.latency_max_ms = lat.back();
  }
  return s;
}

double detection_share_within(const MetricsRecord& r, Timestamp budget) {
  if (r.detections.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& d : r.detections) ok += (d.detection_time - d.t_violate) < budget;
  return static_cast<double>(ok) / static_cast<double>(r.detections.size());
}

double overhead(double base, double monitored) {
  if (base == 0.0) throw std::invalid_argument("overhead needs a non-zero baseline");
  return (base - monitored) / base;
}

double benefit(double eventual, double sequential) {
  if (sequential == 0.0) throw std::invalid_argument("benefit needs a non-zero baseline");
  return (eventual - sequential) / sequential;
}

std::vector<AverageBucket> average_records(const std::vector<MetricsRecord>& records) {
  std::size_t len = 0;
  for (const auto& r : records) len = std::max(len, r.buckets.size());
  std::vector<AverageBucket> out(len);
  if (records.empty()) return out;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.buckets.size(); ++i) {
      const auto& b = r.buckets[i];
      out[i].server_ops += static_cast<double>(b.server_ops);
      out[i].app_ops += static_cast<double>(b.app_ops);
      out[i].violations += static_cast<double>(b.violations);
      out[i].detections += static_cast<double>(b.detections);
      out[i].aborts += static_cast<double>(b.aborts);
      out[i].candidates += static_cast<double>(b.candidates);
    }
  }
  const auto n = static_cast<double>(records.size());
  for (auto& a : out) {
    a.server_ops /= n;
    a.app_ops /= n;
    a.violations /= n;
    a.detections /= n;
    a.aborts /= n;
    a.candidates /= n;
  }
  return out;
}

// ---- output ----

void write_csv(std::ostream& out, const MetricsRecord& r) {
  out << kCsvHeader << '\n';
  for (std::size_t i = 0; i < r.buckets.size(); ++i) {
    const auto& b = r.buckets[i];
    out << i << ',' << b.server_ops << ',' << b.app_ops << ',' << b.violations << ',' << b.detections
        << ',' << b.aborts << ',' << b.candidates << '\n';
  }
}

void write_average_csv(std::ostream& out, const std::vector<AverageBucket>& avg) {
  out << kCsvHeader << '\n';
  char buf[256];
  for (std::size_t i = 0; i < avg.size(); ++i) {
    const auto& a = avg[i];
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f\n", i, a.server_ops, a.app_ops,
                  a.violations, a.detections, a.aborts, a.candidates);
    out << buf;
  }
}

void write_events(std::ostream& out, const MetricsRecord& r) {
  using nlohmann::json;
  for (const auto& d : r.detections) {
    out << json{{"type", "detection"},
                {"predicate", d.predicate},
                {"t_violate_us", d.t_violate},
                {"detection_us", d.detection_time},
                {"monitor", d.monitor}}
               .dump()
        << '\n';
  }
  for (const auto& e : r.events) {
    json j{{"time_us", e.time}};
    switch (e.kind) {
      case RunEvent::Kind::Violation:
        j["type"] = "violation";
        j["what"] = e.what;
        break;
      case RunEvent::Kind::Abort:
        j["type"] = "abort";
        j["client"] = e.client;
        j["task"] = e.task;
        break;
      case RunEvent::Kind::Switch:
        j["type"] = "switch";
        j["client"] = e.client;
        break;
    }
    out << j.dump() << '\n';
  }
  json summary{{"type", "summary"},
               {"seed", r.seed},
               {"end_us", r.end_time},
               {"aborts", r.aborts},
               {"writes_in_aborted", r.writes_in_aborted},
               {"switched_clients", r.switched_clients},
               {"co_occupancy", r.co_occupancy},
               {"candidate_messages", r.candidate_messages},
               {"server_messages", r.server_messages},
               {"progress", r.total_progress()}};
  summary["completion_us"] = r.completion_time ? json(*r.completion_time) : json(nullptr);
  summary["proper_coloring"] = r.proper_coloring;
  out << summary.dump() << '\n';
}

std::vector<std::string> write_outputs(const std::string& dir, const ExperimentConfig& cfg,
                                       const std::vector<MetricsRecord>& records) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  auto open = [&](const std::string& name) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    files.push_back(path);
    return out;
  };
  for (std::size_t t = 0; t < records.size(); ++t) {
    const std::string stem = cfg.name + "_trial" + std::to_string(t + 1);
    {
      auto out = open(stem + ".csv");
      write_csv(out, records[t]);
    }
    auto ev = open(stem + "_events.jsonl");
    write_events(ev, records[t]);
  }
  auto avg = open(cfg.name + "_avg.csv");
  write_average_csv(avg, average_records(records));
  return files;
}

std::vector<AverageBucket> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::invalid_argument("not a metrics csv");
  std::vector<AverageBucket> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    boost::split(f, line, boost::is_any_of(","));
    if (f.size() != 7) throw std::invalid_argument("bad csv row: " + line);
    AverageBucket b;
    b.server_ops = std::stod(f[1]);
    b.app_ops = std::stod(f[2]);
    b.violations = std::stod(f[3]);
    b.detections = std::stod(f[4]);
    b.aborts = std::stod(f[5]);
    b.candidates = std::stod(f[6]);
    out.push_back(b);
  }
  return out;
}

}  // namespace kvmon
