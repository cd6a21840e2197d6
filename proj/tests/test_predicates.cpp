#include <algorithm>
#include <stdexcept>

#include "doctest.h"
#include "kvmon/predicates.hpp"

using namespace kvmon;

namespace {

const char* kFigure = R"(<predicate>
  <type>semilinear</type>
  <conjClause>
    <id>0</id>
    <var>
      <name>x2</name> <value>1</value>
    </var>
    <var>
      <name>y2</name> <value>1</value>
    </var>
  </conjClause>
  <conjClause>
    <id>1</id>
    <var>
      <name>z2</name> <value>1</value>
    </var>
  </conjClause>
</predicate>)";

}  // namespace

TEST_CASE("parse the xml form") {
  const PredicateSpec spec = parse_spec(kFigure, "fig");
  CHECK(spec.name == "fig");
  CHECK(spec.kind == PredicateKind::Semilinear);
  REQUIRE(spec.clauses.size() == 2);
  CHECK(spec.clauses[0] == Clause{{"x2", "1"}, {"y2", "1"}});
  CHECK(spec.clauses[1] == Clause{{"z2", "1"}});
  CHECK(spec.variables() == std::vector<std::string>{"x2", "y2", "z2"});

  const PredicateSpec one = parse_spec(
      "<predicate><name>p</name><type>linear</type>"
      "<conjClause><var><name>a</name><value>true</value></var></conjClause></predicate>");
  CHECK(one.name == "p");
  CHECK(one.kind == PredicateKind::Linear);
  CHECK(one.clauses == std::vector<Clause>{{{"a", "true"}}});

  CHECK_THROWS_WITH_AS(parse_spec("<predicate><type>bounded-sum</type></predicate>"),
                       doctest::Contains("unsupported kind"), std::invalid_argument);
  CHECK_THROWS_AS(parse_spec("<predicate><type>linear</type><conjClause><id>0</id></conjClause>"
                             "</predicate>"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_spec("<predicate><type>linear</type>"), std::invalid_argument);
  // Linear specs are a single conjunction.
  CHECK_THROWS_AS(parse_spec("<predicate><type>linear</type>"
                             "<conjClause><var><name>a</name><value>1</value></var></conjClause>"
                             "<conjClause><var><name>b</name><value>1</value></var></conjClause>"
                             "</predicate>"),
                  std::invalid_argument);
}

TEST_CASE("serialize round trip") {
  const PredicateSpec fig = parse_spec(kFigure, "fig");
  CHECK(parse_spec(serialize_spec(fig)) == fig);
  const PredicateSpec edge = edge_mutex_spec(3, 9);
  CHECK(parse_spec(serialize_spec(edge)) == edge);
}

TEST_CASE("infer edge predicates from lock names") {
  const auto a = infer_from_variable("flag17_42_17");
  REQUIRE(a);
  CHECK(a->name == "mutex17_42");
  CHECK(a->kind == PredicateKind::Semilinear);
  REQUIRE(a->clauses.size() == 1);
  CHECK(a->clauses[0] == Clause{{"flag17_42_17", "true"},
                                {"turn17_42", "17"},
                                {"flag17_42_42", "true"},
                                {"turn17_42", "42"}});
  CHECK(infer_from_variable("turn17_42") == a);
  CHECK(infer_from_variable("flag17_42_42") == a);
  CHECK_FALSE(infer_from_variable("color17"));
  CHECK_FALSE(infer_from_variable("flagpole"));
  CHECK_THROWS_AS(infer_from_variable("flag42_17_42"), std::invalid_argument);
  CHECK_THROWS_AS(infer_from_variable("turn5_5"), std::invalid_argument);
  CHECK_THROWS_AS(infer_from_variable("flag1_2_3"), std::invalid_argument);
}

TEST_CASE("monitor assignment") {
  CHECK(assign_monitor("anything", 1) == 0);
  CHECK(assign_monitor("mutex1_2", 7) == assign_monitor("mutex1_2", 7));
  std::vector<int> hist(3, 0);
  int count = 0;
  for (int a = 0; a < 100 && count < 10000; ++a) {
    for (int b = a + 1; b < 200 && count < 10000; ++b, ++count) {
      ++hist[assign_monitor(edge_predicate_name(static_cast<std::uint64_t>(a),
                                                static_cast<std::uint64_t>(b)),
                            3)];
    }
  }
  REQUIRE(count == 10000);
  for (int h : hist) {
    CHECK(h > 2833);
    CHECK(h < 3833);
  }
}

TEST_CASE("placement and participants") {
  Placement pl(3);
  pl.set("x", 2);
  CHECK(pl.home("x") == 2);
  CHECK(pl.home("y") == pl.home("y"));
  CHECK(pl.home("y") < 3);
  CHECK_THROWS_AS(pl.set("z", 3), std::out_of_range);

  PredicateSpec lin{"c", PredicateKind::Linear, {{{"x", "true"}, {"w", "true"}}}};
  pl.set("w", 0);
  CHECK(participants(lin, pl) == std::vector<std::size_t>{0, 2});
  CHECK(participants(edge_mutex_spec(1, 2), pl) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("registry lifecycle") {
  PredicateRegistry reg(3, 1000);
  CHECK(reg.gc_inactive(0) == 0);

  // Every order of the three lock variables yields one entry.
  std::vector<std::string> names{"flag1_2_1", "flag1_2_2", "turn1_2"};
  std::sort(names.begin(), names.end());
  do {
    PredicateRegistry r(3, 1000);
    for (const auto& n : names) r.on_write(n, 5);
    CHECK(r.size() == 1);
    REQUIRE(r.find("mutex1_2"));
    CHECK(r.find("mutex1_2")->monitor == assign_monitor("mutex1_2", 3));
  } while (std::next_permutation(names.begin(), names.end()));

  CHECK(reg.on_write("color4", 0).empty());
  CHECK(reg.on_write("turn1_2", 0).size() == 1);
  reg.declare(PredicateSpec{"custom", PredicateKind::Semilinear, {{{"turn1_2", "1"}}}});
  CHECK(reg.on_write("turn1_2", 500).size() == 2);
  CHECK(reg.size() == 2);

  reg.touch("custom", 1800);
  std::vector<std::string> removed;
  CHECK(reg.gc_inactive(2000, &removed) == 1);
  CHECK(removed == std::vector<std::string>{"mutex1_2"});
  CHECK(reg.find("custom"));
  // Collected specs come back on the next relevant write.
  CHECK(reg.on_write("flag1_2_1", 2100).size() == 1);
  CHECK(reg.size() == 2);
  CHECK(reg.gc_inactive(2100 + 2 * 1000) == 2);
}
