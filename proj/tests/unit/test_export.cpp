#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "flowlump/export.hpp"
#include "oracles.hpp"

using namespace flowlump;

TEST_CASE("JSON export lists modules, physical flows and inter-module links") {
  // Two triangles joined by one link each way; physical 0 owns states 0 and 3.
  auto net = oracle::make_network({0, 1, 2, 0, 3, 4},
                                  {{0, 1, 1.0}, {1, 2, 1.0}, {2, 0, 1.0}, {3, 4, 1.0}, {4, 5, 1.0}, {5, 3, 1.0},
                                   {2, 3, 0.1}, {5, 0, 0.1}});
  auto graph = make_flow_graph(net, visit_rates(net).rates);
  auto map = optimize(graph);
  REQUIRE(map.modules.size() == 2);
  std::ostringstream out;
  write_map_json(out, net, map);
  auto doc = nlohmann::json::parse(out.str());
  CHECK(doc["format"] == "flowlump-map");
  CHECK(doc["modules"].size() == 2);
  double flow = 0.0;
  for (const auto& m : doc["modules"]) {
    flow += m["flow"].get<double>();
    CHECK(m["states"].size() == 3);
    double phys = 0.0;
    for (const auto& p : m["physical_nodes"]) phys += p["flow"].get<double>();
    CHECK(phys == doctest::Approx(m["flow"].get<double>()));
  }
  CHECK(flow == doctest::Approx(1.0));
  REQUIRE(doc["links"].size() == 2);
  double exit = 0.0;
  for (const auto& m : map.modules) exit += m.exit_flow;
  CHECK(doc["links"][0]["flow"].get<double>() + doc["links"][1]["flow"].get<double>() == doctest::Approx(exit));

  ExportOptions only_big;
  only_big.min_module_flow = 0.9;
  std::ostringstream small;
  write_map_json(small, net, map, only_big);
  CHECK(nlohmann::json::parse(small.str())["modules"].empty());
}
