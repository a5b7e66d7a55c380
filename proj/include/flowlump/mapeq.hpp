#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowlump/common.hpp"
#include "flowlump/corpus.hpp"

namespace flowlump {

// Flow view of a state network: node visit rates p_u and link flows
// p_u * w_uv / w_u. Self-links are dropped since they never cross a module
// boundary.
struct FlowGraph {
  struct Arc {
    std::uint32_t node;
    double flow;
  };
  std::vector<double> node_flow;
  // Physical visit rates carried by each node, sorted by physical id. A state
  // node carries one entry; aggregated nodes carry the sum per physical node.
  std::vector<std::vector<std::pair<PhysId, double>>> physical_flow;
  std::vector<std::vector<Arc>> out;  // no self-links
  std::vector<std::vector<Arc>> in;   // no self-links
  std::vector<double> out_flow;       // sum of `out`

  std::size_t size() const { return node_flow.size(); }
};

FlowGraph make_flow_graph(const StateNetwork& net, std::span<const double> rates);

// Two-level map equation, bits/step:
//   L = q H(Q) + sum_m p_m H(P^m)
// with q_m the exit flow of module m, Q = {q_m / q}, and P^m the codebook over
// {q_m} and the module's visit rates aggregated per physical node.
double map_equation(const StateNetwork& net, std::span<const double> rates,
                    std::span<const ModuleId> assignment);
double map_equation(const FlowGraph& graph, std::span<const ModuleId> assignment);

struct PhysicalFlow {
  PhysId physical;
  double flow;
};

// A module of a (possibly hierarchical) map. Leaf modules list their states
// (descending flow); inner modules list submodules (descending flow).
struct ModuleNode {
  double flow = 0.0;       // sum of member visit rates
  double exit_flow = 0.0;
  double enter_flow = 0.0;
  std::vector<PhysicalFlow> physical_flows;  // aggregated, descending flow
  std::vector<StateId> states;               // leaf modules only
  std::vector<ModuleNode> children;          // empty for leaf modules
};

struct ModuleMap {
  std::vector<ModuleId> assignment;  // state -> top-level module
  std::vector<ModuleNode> modules;   // top level, ids are positions; descending flow
  std::vector<double> state_flow;    // visit rate of every state
  double codelength_bits = 0.0;      // two-level L of `assignment`
  double one_module_codelength_bits = 0.0;
  // Multilevel code length of `modules` as a tree; equals codelength_bits for
  // a two-level map.
  double hierarchical_codelength_bits = 0.0;
  std::size_t depth = 1;  // levels of modules below the root
  std::size_t trials = 0;
  std::uint64_t best_seed = 0;
};

// Builds the two-level ModuleMap for an assignment, relabelling modules by
// descending flow (ties by smallest member state).
ModuleMap make_module_map(const FlowGraph& graph, std::span<const ModuleId> assignment);

// Multilevel map equation over a module tree. The root codebook codes top
// modules by their exit flow (matching the two-level value); an inner module's
// codebook holds its exit flow and its submodules' enter flows; leaf codebooks
// hold the exit flow and the aggregated physical visit rates.
double hierarchical_codelength(const FlowGraph& graph, std::span<const ModuleNode> top);

struct OptimizeOptions {
  std::size_t trials = 10;
  std::uint64_t seed = 123;
  double min_improvement = 1e-10;  // bits per full pass
  std::size_t max_fine_tune_rounds = 20;
  // Recompute L from scratch after every `verify_interval` accepted moves and
  // throw if the incremental value drifted by more than 1e-9 (0 disables).
  std::size_t verify_interval = 0;
};

// Louvain-style search: local moves of nodes to neighbouring modules,
// aggregation into module nodes, recursion, then fine-tuning rounds that
// restart leaf moves from the current modules. Best of `trials` runs with
// seeds seed, seed+1, ...; ties keep the lowest seed.
ModuleMap optimize(const StateNetwork& net, std::span<const double> rates, const OptimizeOptions& options = {},
                   const ParallelFor& parallel = sequential_for);
ModuleMap optimize(const FlowGraph& graph, const OptimizeOptions& options = {},
                   const ParallelFor& parallel = sequential_for);

struct HierarchyOptions {
  std::size_t max_depth = 5;
  OptimizeOptions optimize;
};

// Adds nested levels to a two-level map: groups top modules into super
// modules and splits modules into submodules, keeping each change only if the
// multilevel code length drops.
ModuleMap hierarchical(const FlowGraph& graph, const ModuleMap& top, const HierarchyOptions& options = {});
ModuleMap hierarchical(const StateNetwork& net, std::span<const double> rates, const ModuleMap& top,
                       const HierarchyOptions& options = {});

// `path flow "physicalName" stateId physicalId` lines; path is 1-based module
// coordinates ending in the state's rank inside its leaf module.
void write_tree(std::ostream& out, const StateNetwork& net, const ModuleMap& map);

struct TreeEntry {
  std::vector<std::uint32_t> path;
  double flow = 0.0;
  std::string name;
  StateId state = 0;
  PhysId physical = 0;
};

struct TreeFile {
  double codelength_bits = 0.0;
  std::vector<TreeEntry> entries;
};

TreeFile read_tree(std::istream& in);

// Assignment of states to modules at `level` (1 = top, larger = deeper; a
// path shorter than the level uses its leaf module). Module ids are dense in
// first-appearance order.
std::vector<ModuleId> tree_assignment(const TreeFile& tree, std::size_t num_states, std::size_t level = 1);

// Rebuilds the (possibly nested) map a tree file describes, recomputing every
// flow from `graph`.
ModuleMap module_map_from_tree(const FlowGraph& graph, const TreeFile& tree);

}  // namespace flowlump
