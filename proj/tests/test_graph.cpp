#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "kvmon/graph.hpp"

using namespace kvmon;

TEST_CASE("regular graphs") {
  const WorkGraph g = gen_graph(GraphKind::Regular, 1000, 5);
  for (NodeId v = 0; v < g.size(); ++v) {
    REQUIRE(g.degree(v) == 6);
    CHECK_FALSE(g.has_edge(v, v));
  }
  CHECK(g.edge_count() == 3000);
  CHECK(gen_graph(GraphKind::Regular, 1000, 5).edges() == g.edges());
  CHECK(gen_graph(GraphKind::Regular, 1000, 6).edges() != g.edges());
  CHECK_THROWS_AS(gen_graph(GraphKind::Regular, 7, 1, GraphParams{3}), std::invalid_argument);
  CHECK_THROWS_AS(gen_graph(GraphKind::Regular, 0, 1), std::invalid_argument);
}

TEST_CASE("power-law cluster graphs are heavy tailed") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const WorkGraph g = gen_graph(GraphKind::PowerLawCluster, 1000, seed);
    std::vector<std::size_t> deg;
    for (NodeId v = 0; v < g.size(); ++v) deg.push_back(g.degree(v));
    std::sort(deg.begin(), deg.end());
    const std::size_t median = deg[deg.size() / 2];
    CHECK(deg.back() > 3 * median);
    CHECK(deg.front() >= 1);
    // About m edges per added node.
    CHECK(g.edge_count() > 2900);
    CHECK(g.edge_count() <= 3000);
  }
}

TEST_CASE("line and grid") {
  WorkGraph line = gen_graph(GraphKind::Line, 10, 0);
  CHECK(line.edge_count() == 9);
  assign_owners(line, 2);
  CHECK(line.cross_edges() == std::vector<std::pair<NodeId, NodeId>>{{4, 5}});
  CHECK(line.owned_by(0) == std::vector<NodeId>{0, 1, 2, 3, 4});

  WorkGraph grid = gen_graph(GraphKind::Grid, 36, 0);
  CHECK(grid.width == 6);
  CHECK(grid.height == 6);
  CHECK(grid.edge_count() == 2 * 6 * 5);
  CHECK(grid.degree(0) == 2);
  CHECK(grid.degree(7) == 4);
  assign_owners(grid, 4);
  // 2x2 blocks of 3x3 nodes.
  for (std::size_t c = 0; c < 4; ++c) CHECK(grid.owned_by(c).size() == 9);
  CHECK(grid.owner[0] == 0);
  CHECK(grid.owner[5] == 1);
  CHECK(grid.owner[35] == 3);
  CHECK(grid.cross_edges().size() == 12);

  CHECK(near_square(12) == std::pair<std::size_t, std::size_t>{3, 4});
  CHECK(near_square(7) == std::pair<std::size_t, std::size_t>{1, 7});
}

TEST_CASE("ownership covers every node") {
  WorkGraph g = gen_graph(GraphKind::Regular, 100, 2);
  assign_owners(g, 7);
  std::vector<std::size_t> count(7, 0);
  for (std::size_t o : g.owner) ++count.at(o);
  for (std::size_t c : count) CHECK(c >= 14);
  CHECK_THROWS_AS(assign_owners(g, 0), std::invalid_argument);
}

TEST_CASE("edge list round trip") {
  WorkGraph g = gen_graph(GraphKind::Grid, 20, 0);
  assign_owners(g, 2);
  std::stringstream edges, owners;
  write_edge_list(edges, g);
  write_owners(owners, g);
  WorkGraph back = read_edge_list(edges);
  read_owners(owners, back);
  CHECK(back.kind == GraphKind::Grid);
  CHECK(back.width == g.width);
  CHECK(back.adj == g.adj);
  CHECK(back.owner == g.owner);
  CHECK(back.clients == 2);

  std::stringstream bad("0 1\nx y\n");
  CHECK_THROWS_AS(read_edge_list(bad), std::invalid_argument);
  std::stringstream partial("0 0\n");
  WorkGraph small = gen_graph(GraphKind::Line, 3, 0);
  CHECK_THROWS_AS(read_owners(partial, small), std::invalid_argument);
}
