#include "kvmon/workloads.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <stdexcept>

namespace kvmon {

EdgeLock EdgeLock::between(NodeId x, NodeId y) {
  if (x == y) throw std::invalid_argument("edge lock needs two distinct nodes");
  return EdgeLock{std::min(x, y), std::max(x, y)};
}

NodeId EdgeLock::peer(NodeId self) const {
  if (self == a) return b;
  if (self == b) return a;
  throw std::invalid_argument("node is not an endpoint of the lock");
}

std::vector<EdgeLock> task_locks(const WorkGraph& g, const std::vector<NodeId>& nodes) {
  std::set<EdgeLock> out;
  for (NodeId n : nodes) {
    for (NodeId m : g.adj.at(n)) {
      if (g.owner.at(n) != g.owner.at(m)) out.insert(EdgeLock::between(n, m));
    }
  }
  return {out.begin(), out.end()};
}

int coloring_color_choice(const std::vector<int>& neighbor_colors) {
  std::vector<int> used = neighbor_colors;
  std::sort(used.begin(), used.end());
  int c = 0;
  for (int u : used) {
    if (u == c) {
      ++c;
    } else if (u > c) {
      break;
    }
  }
  return c;
}

std::optional<std::string> resolve_turn(const VersionedValue& turn) {
  const VersionedEntry* best = nullptr;
  for (const VersionedEntry& e : turn.entries()) {
    if (!best || e.version.counters() > best->version.counters()) best = &e;
  }
  if (!best) return std::nullopt;
  return best->value;
}

bool peterson_may_enter(const VersionedValue& peer_flag, const VersionedValue& turn, NodeId self) {
  if (!peer_flag.has_value("true")) return true;
  const auto t = resolve_turn(turn);
  return t && *t != std::to_string(self);
}

namespace {

struct Spin {
  KvClient& client;
  Scheduler& sched;
  EdgeLock lock;
  NodeId self;
  PetersonOptions opt;
  Timestamp deadline = 0;
  std::function<void(bool)> done;
};

void spin_round(const std::shared_ptr<Spin>& s) {
  s->client.get(s->lock.flag(s->lock.peer(s->self)), [s](GetResult flag) {
    s->client.get(s->lock.turn(), [s, flag = std::move(flag)](GetResult turn) {
      if (flag.ok && turn.ok && peterson_may_enter(flag.value, turn.value, s->self)) {
        s->done(true);
        return;
      }
      if (s->sched.now() >= s->deadline) {
        s->done(false);
        return;
      }
      s->sched.after(s->opt.poll_interval, [s] { spin_round(s); });
    });
  });
}

// Calls step(i, next) for i = 0..n-1 in order, then done().
void sequence(std::size_t n, std::function<void(std::size_t, std::function<void()>)> step,
              std::function<void()> done) {
  struct Loop {
    std::size_t n;
    std::function<void(std::size_t, std::function<void()>)> step;
    std::function<void()> done;
    std::size_t i = 0;
  };
  auto loop = std::make_shared<Loop>(Loop{n, std::move(step), std::move(done)});
  auto advance = std::make_shared<std::function<void()>>();
  *advance = [loop, weak = std::weak_ptr<std::function<void()>>(advance)] {
    if (loop->i >= loop->n) {
      loop->done();
      return;
    }
    const std::size_t i = loop->i++;
    auto self = weak.lock();
    loop->step(i, [self] { (*self)(); });
  };
  (*advance)();
}

std::int64_t parse_int(const std::string& s, std::int64_t fallback) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return fallback;
  return v;
}

}  // namespace

void peterson_acquire(KvClient& client, Scheduler& sched, const EdgeLock& lock, NodeId self,
                      const PetersonOptions& opt, std::function<void(bool)> done) {
  auto s = std::make_shared<Spin>(Spin{client, sched, lock, self, opt, 0, std::move(done)});
  client.put(lock.flag(self), "true", [s](bool ok) {
    if (!ok) {
      s->done(false);
      return;
    }
    s->client.put(s->lock.turn(), std::to_string(s->self), [s](bool ok2) {
      if (!ok2) {
        s->done(false);
        return;
      }
      s->deadline = s->sched.now() + s->opt.spin_timeout;
      spin_round(s);
    });
  });
}

void peterson_release(KvClient& client, const EdgeLock& lock, NodeId self,
                      std::function<void()> done) {
  client.put(lock.flag(self), "false", [done = std::move(done)](bool) { done(); });
}

void CsTracker::enter(const std::string& predicate, std::size_t client, Timestamp now) {
  auto& in = inside_[predicate];
  if (std::find(in.begin(), in.end(), client) != in.end()) return;
  in.push_back(client);
  if (in.size() > 1) {
    ++co_occupancy_;
    metrics_.violation(now, predicate);
  }
}

void CsTracker::leave(const std::string& predicate, std::size_t client) {
  auto it = inside_.find(predicate);
  if (it == inside_.end()) return;
  auto& in = it->second;
  in.erase(std::remove(in.begin(), in.end(), client), in.end());
  if (in.empty()) inside_.erase(it);
}

std::string color_key(NodeId n) { return "color" + std::to_string(n); }
std::string weather_key(NodeId n) { return "wx" + std::to_string(n); }

std::int64_t weather_initial(NodeId n) {
  return static_cast<std::int64_t>(stable_hash("wx" + std::to_string(n)) % 100);
}

std::int64_t weather_aggregate(std::int64_t own, const std::vector<std::int64_t>& neighbors) {
  std::int64_t sum = own;
  for (std::int64_t v : neighbors) sum += v;
  return sum / static_cast<std::int64_t>(neighbors.size() + 1);
}

GraphClient::GraphClient(Scheduler& sched, KvClient& kv, const WorkGraph& graph, std::size_t client,
                         GraphAppOptions opt, CsTracker& cs, MetricsSink& metrics,
                         std::uint64_t seed)
    : sched_(sched),
      kv_(kv),
      graph_(graph),
      client_(client),
      opt_(opt),
      cs_(cs),
      metrics_(metrics),
      rng_(seed),
      rt_(client, {}, opt.strategy, kv.quorum(), seed ^ 0x9e3779b97f4a7c15ULL),
      runner_(sched, rt_, hooks(), metrics, opt.park_delay, seed + 1) {
  if (opt_.task_size == 0) throw std::invalid_argument("task size must be positive");
  for (NodeId n : graph_.owned_by(client_)) own_values_[n] = weather_initial(n);
  rt_.append(make_tasks());
  if (opt_.app == GraphApp::Weather) {
    runner_.set_on_finished([this] {
      // Weather never terminates: sweep the owned nodes again.
      rt_.append(make_tasks());
      sched_.after(0, [this] { runner_.start(); });
    });
  } else {
    runner_.set_on_finished([this] { finished_at_ = sched_.now(); });
  }
}

std::vector<Task> GraphClient::make_tasks() {
  std::vector<NodeId> nodes = graph_.owned_by(client_);
  if (opt_.interior_first) {
    std::stable_partition(nodes.begin(), nodes.end(), [this](NodeId n) {
      const auto& adj = graph_.adj[n];
      return std::none_of(adj.begin(), adj.end(),
                          [&](NodeId m) { return graph_.owner[m] != client_; });
    });
  }
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < nodes.size(); i += opt_.task_size) {
    Task t;
    t.id = next_task_id_++;
    const std::size_t end = std::min(nodes.size(), i + opt_.task_size);
    t.nodes.assign(nodes.begin() + static_cast<std::ptrdiff_t>(i),
                   nodes.begin() + static_cast<std::ptrdiff_t>(end));
    tasks.push_back(std::move(t));
  }
  return tasks;
}

TaskHooks GraphClient::hooks() {
  TaskHooks h;
  h.acquire = [this](Task& t, std::function<void(bool)> k) { acquire(t, std::move(k)); };
  h.read = [this](Task& t, std::function<void()> k) { read(t, std::move(k)); };
  h.write = [this](Task& t, std::function<void()> k) { write(t, std::move(k)); };
  h.release = [this](Task& t, std::function<void()> k) { release(t, std::move(k)); };
  h.set_quorum = [this](const QuorumConfig& q) { kv_.set_quorum(q); };
  return h;
}

void GraphClient::start() { runner_.start(); }

bool GraphClient::finished() const {
  return opt_.app == GraphApp::Coloring && rt_.finished();
}

void GraphClient::acquire(Task& t, std::function<void(bool)> done) {
  locks_ = task_locks(graph_, t.nodes);
  touched_ = 0;
  entered_ = 0;
  auto failed = std::make_shared<bool>(false);
  sequence(
      locks_.size(),
      [this, failed](std::size_t i, std::function<void()> next) {
        if (*failed) {
          next();
          return;
        }
        const EdgeLock lock = locks_[i];
        const NodeId self = graph_.owner[lock.a] == client_ ? lock.a : lock.b;
        ++touched_;
        peterson_acquire(kv_, sched_, lock, self, opt_.lock, [this, failed, lock, next](bool ok) {
          if (ok) {
            rt_.note_lock(lock.predicate());
            cs_.enter(lock.predicate(), client_, sched_.now());
            ++entered_;
          } else {
            *failed = true;
          }
          next();
        });
      },
      [failed, done = std::move(done)] { done(!*failed); });
}

void GraphClient::read(Task& t, std::function<void()> done) {
  pending_.clear();
  const std::vector<NodeId> nodes = t.nodes;
  sequence(
      nodes.size(),
      [this, nodes](std::size_t i, std::function<void()> next) {
        const NodeId n = nodes[i];
        const auto& adj = graph_.adj[n];
        auto colors = std::make_shared<std::vector<int>>();
        auto values = std::make_shared<std::vector<std::int64_t>>();
        sequence(
            adj.size(),
            [this, n, colors, values](std::size_t j, std::function<void()> next_nb) {
              const NodeId m = graph_.adj[n][j];
              const bool color = opt_.app == GraphApp::Coloring;
              kv_.get(color ? color_key(m) : weather_key(m),
                      [this, m, color, colors, values, next_nb](GetResult r) {
                        auto local = pending_.find(m);
                        if (color) {
                          if (local != pending_.end()) colors->push_back(static_cast<int>(local->second));
                          for (const auto& e : r.value.entries()) {
                            colors->push_back(static_cast<int>(parse_int(e.value, -1)));
                          }
                        } else if (local != pending_.end()) {
                          values->push_back(local->second);
                        } else {
                          // Siblings resolve to the largest reading.
                          std::int64_t best = weather_initial(m);
                          bool any = false;
                          for (const auto& e : r.value.entries()) {
                            const std::int64_t v = parse_int(e.value, best);
                            best = any ? std::max(best, v) : v;
                            any = true;
                          }
                          values->push_back(best);
                        }
                        next_nb();
                      });
            },
            [this, n, colors, values, next] {
              if (opt_.app == GraphApp::Coloring) {
                pending_[n] = coloring_color_choice(*colors);
              } else {
                pending_[n] = weather_aggregate(own_values_[n], *values);
              }
              next();
            });
      },
      std::move(done));
}

void GraphClient::write(Task& t, std::function<void()> done) {
  const std::vector<NodeId> nodes = t.nodes;
  sequence(
      nodes.size(),
      [this, nodes](std::size_t i, std::function<void()> next) {
        const NodeId n = nodes[i];
        const std::int64_t v = pending_.at(n);
        ++node_steps_;
        const bool put = opt_.app == GraphApp::Coloring ||
                         std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < opt_.put_ratio;
        if (!put) {
          next();
          return;
        }
        ++value_puts_;
        rt_.note_value_write();
        own_values_[n] = v;
        const std::string key = opt_.app == GraphApp::Coloring ? color_key(n) : weather_key(n);
        kv_.put(key, std::to_string(v), [next](bool) { next(); });
      },
      [this, nodes, done = std::move(done)] {
        metrics_.progress(sched_.now(), nodes.size());
        done();
      });
}

void GraphClient::release(Task&, std::function<void()> done) {
  for (std::size_t i = 0; i < entered_; ++i) cs_.leave(locks_[i].predicate(), client_);
  const std::size_t count = touched_;
  touched_ = 0;
  entered_ = 0;
  // Reverse acquisition order.
  sequence(
      count,
      [this, count](std::size_t i, std::function<void()> next) {
        const EdgeLock lock = locks_[count - 1 - i];
        const NodeId self = graph_.owner[lock.a] == client_ ? lock.a : lock.b;
        peterson_release(kv_, lock, self, std::move(next));
      },
      std::move(done));
}

std::string conjunctive_variable(std::size_t group, std::size_t client) {
  return "conj" + std::to_string(group) + "_" + std::to_string(client);
}

std::string conjunctive_predicate(std::size_t group) { return "conj" + std::to_string(group); }

PredicateSpec conjunctive_spec(std::size_t group, const std::vector<std::size_t>& clients) {
  PredicateSpec spec;
  spec.name = conjunctive_predicate(group);
  spec.kind = PredicateKind::Linear;
  spec.clauses.emplace_back();
  for (std::size_t c : clients) spec.clauses[0].push_back({conjunctive_variable(group, c), "true"});
  return spec;
}

ConjunctiveClient::ConjunctiveClient(Scheduler& sched, KvClient& kv, std::size_t client,
                                     std::size_t group, ConjunctiveOptions opt, std::uint64_t seed)
    : sched_(sched), kv_(kv), client_(client), group_(group), opt_(opt), rng_(seed) {
  if (opt_.beta < 0.0 || opt_.beta > 1.0) throw std::invalid_argument("beta must be in [0, 1]");
}

void ConjunctiveClient::start() { step(); }

void ConjunctiveClient::step() {
  const bool on = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < opt_.beta;
  ++steps_;
  trues_ += on;
  kv_.put(conjunctive_variable(group_, client_), on ? "true" : "false",
          [this](bool) { sched_.after(opt_.period, [this] { step(); }); });
}

KvLoadClient::KvLoadClient(KvClient& kv, KvOptions opt, std::uint64_t seed)
    : kv_(kv), opt_(opt), rng_(seed) {
  if (opt_.keys == 0) throw std::invalid_argument("key space must be non-empty");
}

void KvLoadClient::step() {
  const std::string key =
      "k" + std::to_string(std::uniform_int_distribution<std::size_t>(0, opt_.keys - 1)(rng_));
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < opt_.put_ratio) {
    ++puts_;
    kv_.put(key, std::to_string(puts_), [this](bool) { step(); });
  } else {
    ++gets_;
    kv_.get(key, [this](GetResult) { step(); });
  }
}

}  // namespace kvmon
