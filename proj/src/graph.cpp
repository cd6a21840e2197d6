#include "kvmon/graph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace kvmon {

GraphKind parse_graph_kind(std::string_view name) {
  if (name == "regular") return GraphKind::Regular;
  if (name == "powerlaw") return GraphKind::PowerLawCluster;
  if (name == "line") return GraphKind::Line;
  if (name == "grid") return GraphKind::Grid;
  throw std::invalid_argument("unknown graph kind: " + std::string(name));
}

std::string_view graph_kind_name(GraphKind k) {
  switch (k) {
    case GraphKind::Regular: return "regular";
    case GraphKind::PowerLawCluster: return "powerlaw";
    case GraphKind::Line: return "line";
    case GraphKind::Grid: return "grid";
  }
  return "?";
}

std::size_t WorkGraph::edge_count() const {
  std::size_t d = 0;
  for (const auto& a : adj) d += a.size();
  return d / 2;
}

std::vector<std::pair<NodeId, NodeId>> WorkGraph::edges() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (NodeId a = 0; a < adj.size(); ++a) {
    for (NodeId b : adj[a]) {
      if (a < b) out.emplace_back(a, b);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<NodeId, NodeId>> WorkGraph::cross_edges() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (const auto& e : edges()) {
    if (owner.at(e.first) != owner.at(e.second)) out.push_back(e);
  }
  return out;
}

std::vector<NodeId> WorkGraph::owned_by(std::size_t client) const {
  std::vector<NodeId> out;
  for (NodeId n = 0; n < owner.size(); ++n) {
    if (owner[n] == client) out.push_back(n);
  }
  return out;
}

void WorkGraph::add_edge(NodeId a, NodeId b) {
  if (a == b) throw std::invalid_argument("self loop");
  if (std::max(a, b) >= adj.size()) throw std::out_of_range("edge endpoint out of range");
  if (has_edge(a, b)) return;
  adj[a].push_back(b);
  adj[b].push_back(a);
}

bool WorkGraph::has_edge(NodeId a, NodeId b) const {
  const auto& l = adj.at(a);
  return std::find(l.begin(), l.end(), b) != l.end();
}

namespace {

void sort_adjacency(WorkGraph& g) {
  for (auto& l : g.adj) std::sort(l.begin(), l.end());
}

// Pairs random stubs, falling back to an exhaustive scan of suitable pairs
// when random picks keep failing; restarts if none is left.
bool try_regular(WorkGraph& g, int d, std::mt19937_64& rng) {
  const std::size_t n = g.size();
  for (auto& l : g.adj) l.clear();
  std::vector<NodeId> stubs;
  stubs.reserve(n * static_cast<std::size_t>(d));
  for (NodeId v = 0; v < n; ++v) {
    for (int k = 0; k < d; ++k) stubs.push_back(v);
  }
  auto take = [&](std::size_t i, std::size_t j) {
    if (i < j) std::swap(i, j);
    stubs[i] = stubs.back();
    stubs.pop_back();
    stubs[j] = stubs.back();
    stubs.pop_back();
  };
  while (!stubs.empty()) {
    bool paired = false;
    for (int tries = 0; tries < 100 && !paired; ++tries) {
      std::uniform_int_distribution<std::size_t> pick(0, stubs.size() - 1);
      const std::size_t i = pick(rng), j = pick(rng);
      const NodeId u = stubs[i], v = stubs[j];
      if (i == j || u == v || g.has_edge(u, v)) continue;
      g.add_edge(u, v);
      take(i, j);
      paired = true;
    }
    if (paired) continue;
    std::vector<std::pair<std::size_t, std::size_t>> ok;
    for (std::size_t i = 0; i < stubs.size(); ++i) {
      for (std::size_t j = i + 1; j < stubs.size(); ++j) {
        if (stubs[i] != stubs[j] && !g.has_edge(stubs[i], stubs[j])) ok.emplace_back(i, j);
      }
    }
    if (ok.empty()) return false;
    const auto [i, j] = ok[std::uniform_int_distribution<std::size_t>(0, ok.size() - 1)(rng)];
    g.add_edge(stubs[i], stubs[j]);
    take(i, j);
  }
  return true;
}

void gen_regular(WorkGraph& g, int d, std::mt19937_64& rng) {
  const std::size_t n = g.size();
  if (d < 0 || static_cast<std::size_t>(d) >= n) throw std::invalid_argument("regular degree must be < n");
  if ((n * static_cast<std::size_t>(d)) % 2 != 0) {
    throw std::invalid_argument("regular graph needs n * d even");
  }
  for (int attempt = 0; attempt < 1000; ++attempt) {
    if (try_regular(g, d, rng)) return;
  }
  throw std::runtime_error("failed to generate a regular graph");
}

// Holme-Kim growth: preferential attachment with a triad-formation step.
void gen_powerlaw(WorkGraph& g, int m, double p, std::mt19937_64& rng) {
  const std::size_t n = g.size();
  if (m < 1 || static_cast<std::size_t>(m) >= n) throw std::invalid_argument("powerlaw needs 1 <= m < n");
  std::vector<NodeId> repeated;
  for (NodeId v = 0; v < static_cast<NodeId>(m); ++v) repeated.push_back(v);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (NodeId source = static_cast<NodeId>(m); source < n; ++source) {
    std::set<NodeId> chosen;
    while (chosen.size() < static_cast<std::size_t>(m)) {
      chosen.insert(repeated[std::uniform_int_distribution<std::size_t>(0, repeated.size() - 1)(rng)]);
    }
    std::vector<NodeId> targets(chosen.begin(), chosen.end());
    std::shuffle(targets.begin(), targets.end(), rng);
    NodeId target = targets.back();
    targets.pop_back();
    g.add_edge(source, target);
    repeated.push_back(target);
    int count = 1;
    while (count < m) {
      if (coin(rng) < p) {
        std::vector<NodeId> hood;
        for (NodeId nb : g.adj[target]) {
          if (nb != source && !g.has_edge(source, nb)) hood.push_back(nb);
        }
        if (!hood.empty()) {
          const NodeId nb = hood[std::uniform_int_distribution<std::size_t>(0, hood.size() - 1)(rng)];
          g.add_edge(source, nb);
          repeated.push_back(nb);
          ++count;
          continue;
        }
      }
      // Triad steps may have consumed a planned target already.
      while (!targets.empty() && g.has_edge(source, targets.back())) targets.pop_back();
      if (targets.empty()) break;
      target = targets.back();
      targets.pop_back();
      g.add_edge(source, target);
      repeated.push_back(target);
      ++count;
    }
    for (int k = 0; k < m; ++k) repeated.push_back(source);
  }
}

}  // namespace

std::pair<std::size_t, std::size_t> near_square(std::size_t n) {
  if (n == 0) return {0, 0};
  auto a = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (a > 1 && n % a != 0) --a;
  if (a == 0) a = 1;
  return {a, n / a};
}

WorkGraph gen_graph(GraphKind kind, std::size_t n, std::uint64_t seed, GraphParams params) {
  if (n < 1) throw std::invalid_argument("graph size must be >= 1");
  WorkGraph g;
  g.kind = kind;
  g.adj.resize(n);
  g.owner.assign(n, 0);
  std::mt19937_64 rng(seed);
  switch (kind) {
    case GraphKind::Regular:
      gen_regular(g, params.degree, rng);
      break;
    case GraphKind::PowerLawCluster:
      gen_powerlaw(g, params.attach, params.triangle_p, rng);
      break;
    case GraphKind::Line:
      for (NodeId v = 0; v + 1 < n; ++v) g.add_edge(v, v + 1);
      break;
    case GraphKind::Grid: {
      const auto [h, w] = near_square(n);
      g.width = w;
      g.height = h;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const NodeId v = y * w + x;
          if (x + 1 < w) g.add_edge(v, v + 1);
          if (y + 1 < h) g.add_edge(v, v + w);
        }
      }
      break;
    }
  }
  sort_adjacency(g);
  return g;
}

void assign_owners(WorkGraph& g, std::size_t clients) {
  if (clients < 1) throw std::invalid_argument("need at least one client");
  const std::size_t n = g.size();
  g.clients = clients;
  g.owner.assign(n, 0);
  if (g.kind == GraphKind::Grid && g.width * g.height == n) {
    const auto [cy, cx] = near_square(clients);
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        const std::size_t bx = x * cx / g.width;
        const std::size_t by = y * cy / g.height;
        g.owner[y * g.width + x] = by * cx + bx;
      }
    }
    return;
  }
  for (std::size_t v = 0; v < n; ++v) g.owner[v] = v * clients / n;
}

void write_edge_list(std::ostream& out, const WorkGraph& g) {
  out << "# " << graph_kind_name(g.kind) << ' ' << g.size();
  if (g.kind == GraphKind::Grid) out << ' ' << g.width << ' ' << g.height;
  out << '\n';
  for (const auto& [a, b] : g.edges()) out << a << ' ' << b << '\n';
}

void write_owners(std::ostream& out, const WorkGraph& g) {
  for (NodeId v = 0; v < g.size(); ++v) out << v << ' ' << g.owner[v] << '\n';
}

WorkGraph read_edge_list(std::istream& in) {
  WorkGraph g;
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, kind;
      std::size_t count = 0;
      ls >> hash >> kind >> count;
      if (ls) {
        g.kind = parse_graph_kind(kind);
        n = std::max(n, count);
        ls >> g.width >> g.height;
      }
      continue;
    }
    NodeId a = 0, b = 0;
    if (!(ls >> a >> b)) throw std::invalid_argument("bad edge line: " + line);
    edges.emplace_back(a, b);
    n = std::max<std::size_t>(n, std::max(a, b) + 1);
  }
  g.adj.resize(n);
  g.owner.assign(n, 0);
  for (const auto& [a, b] : edges) g.add_edge(a, b);
  sort_adjacency(g);
  return g;
}

void read_owners(std::istream& in, WorkGraph& g) {
  NodeId v = 0;
  std::size_t c = 0;
  std::size_t clients = 0;
  std::vector<bool> seen(g.size(), false);
  while (in >> v >> c) {
    if (v >= g.size()) throw std::out_of_range("owner entry for unknown node");
    g.owner[v] = c;
    seen[v] = true;
    clients = std::max(clients, c + 1);
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw std::invalid_argument("ownership map does not cover every node");
  }
  g.clients = clients;
}

}  // namespace kvmon
