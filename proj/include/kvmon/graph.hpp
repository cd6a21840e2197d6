#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kvmon {

using NodeId = std::uint64_t;

enum class GraphKind { Regular, PowerLawCluster, Line, Grid };

GraphKind parse_graph_kind(std::string_view name);
std::string_view graph_kind_name(GraphKind k);

struct GraphParams {
  int degree = 6;            // Regular
  int attach = 3;            // PowerLawCluster: edges per new node
  double triangle_p = 0.1;   // PowerLawCluster: triad formation probability
};

struct WorkGraph {
  GraphKind kind = GraphKind::Line;
  std::vector<std::vector<NodeId>> adj;
  std::vector<std::size_t> owner;
  std::size_t clients = 1;
  /// Grid dimensions; width * height == size().
  std::size_t width = 0;
  std::size_t height = 0;

  std::size_t size() const { return adj.size(); }
  std::size_t degree(NodeId n) const { return adj.at(n).size(); }
  std::size_t edge_count() const;
  /// Undirected edges with a < b, sorted.
  std::vector<std::pair<NodeId, NodeId>> edges() const;
  std::vector<std::pair<NodeId, NodeId>> cross_edges() const;
  std::vector<NodeId> owned_by(std::size_t client) const;
  void add_edge(NodeId a, NodeId b);
  bool has_edge(NodeId a, NodeId b) const;
};

/// Deterministic for (kind, n, seed, params). Ownership is a single client;
/// call assign_owners to split.
WorkGraph gen_graph(GraphKind kind, std::size_t n, std::uint64_t seed, GraphParams params = {});

/// Contiguous id blocks, or rectangular blocks on a grid of clients for Grid.
void assign_owners(WorkGraph& g, std::size_t clients);

/// Nearest-to-square factorisation a * b == n with a <= b.
std::pair<std::size_t, std::size_t> near_square(std::size_t n);

void write_edge_list(std::ostream& out, const WorkGraph& g);
void write_owners(std::ostream& out, const WorkGraph& g);
/// Reads "a b" lines; '#' starts a comment. Node count is max id + 1.
WorkGraph read_edge_list(std::istream& in);
void read_owners(std::istream& in, WorkGraph& g);

}  // namespace kvmon
