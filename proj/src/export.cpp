#include "flowlump/export.hpp"

#include <map>
#include <ostream>

#include <json.hpp>

namespace flowlump {

namespace {

using nlohmann::ordered_json;

ordered_json module_json(const StateNetwork& net, const ModuleMap& map, const ModuleNode& node,
                         const std::string& path) {
  ordered_json j;
  j["path"] = path;
  j["flow"] = node.flow;
  j["exit_flow"] = node.exit_flow;
  j["enter_flow"] = node.enter_flow;
  ordered_json physical = ordered_json::array();
  for (const PhysicalFlow& pf : node.physical_flows)
    physical.push_back({{"id", pf.physical}, {"name", net.physical_names()[pf.physical]}, {"flow", pf.flow}});
  j["physical_nodes"] = std::move(physical);
  if (node.children.empty()) {
    ordered_json states = ordered_json::array();
    for (StateId s : node.states)
      states.push_back({{"id", s}, {"physical", net.physical(s)}, {"flow", map.state_flow[s]}});
    j["states"] = std::move(states);
  } else {
    ordered_json children = ordered_json::array();
    for (std::size_t i = 0; i < node.children.size(); ++i)
      children.push_back(module_json(net, map, node.children[i], path + ":" + std::to_string(i + 1)));
    j["modules"] = std::move(children);
  }
  return j;
}

}  // namespace

void write_map_json(std::ostream& out, const StateNetwork& net, const ModuleMap& map, const ExportOptions& options) {
  if (map.assignment.size() != net.num_states() || map.state_flow.size() != net.num_states())
    throw Error(ErrorKind::InvalidArgument, "map does not match the network");
  double total = 0.0;
  for (const ModuleNode& m : map.modules) total += m.flow;

  ordered_json doc;
  doc["format"] = "flowlump-map";
  doc["version"] = 1;
  doc["order"] = net.order();
  doc["num_states"] = net.num_states();
  doc["num_physical"] = net.num_physical();
  doc["codelength_bits"] = map.codelength_bits;
  doc["one_module_codelength_bits"] = map.one_module_codelength_bits;
  doc["hierarchical_codelength_bits"] = map.hierarchical_codelength_bits;
  doc["depth"] = map.depth;
  doc["num_modules"] = map.modules.size();

  ordered_json modules = ordered_json::array();
  for (std::size_t i = 0; i < map.modules.size(); ++i) {
    if (total > 0.0 && map.modules[i].flow / total < options.min_module_flow) continue;
    modules.push_back(module_json(net, map, map.modules[i], std::to_string(i + 1)));
  }
  doc["modules"] = std::move(modules);

  // Flow along links between distinct top-level modules.
  std::map<std::pair<ModuleId, ModuleId>, double> between;
  for (StateId u = 0; u < net.num_states(); ++u) {
    if (net.is_dangling(u) || map.state_flow[u] <= 0.0) continue;
    auto targets = net.targets(u);
    auto weights = net.weights(u);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      ModuleId a = map.assignment[u], b = map.assignment[targets[i]];
      if (a != b) between[{a, b}] += map.state_flow[u] * weights[i] / net.out_weight(u);
    }
  }
  ordered_json links = ordered_json::array();
  for (const auto& [key, flow] : between)
    links.push_back({{"source", std::to_string(key.first + 1)}, {"target", std::to_string(key.second + 1)}, {"flow", flow}});
  doc["links"] = std::move(links);

  out << doc.dump(options.indent) << '\n';
}

}  // namespace flowlump
