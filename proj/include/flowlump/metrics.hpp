#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flowlump/common.hpp"
#include "flowlump/corpus.hpp"
#include "flowlump/lumping.hpp"

namespace flowlump {

struct PersistenceReport {
  std::vector<double> per_module;   // NaN for modules without outgoing flow
  std::vector<double> module_flow;  // non-dangling visit rate per module
  double overall = 0.0;             // flow-weighted mean of per_module
  std::vector<ModuleId> empty_modules;
  std::string basis;
};

// persistence_m = sum_{u,v in m} p_u P_uv / sum_{u in m, w_u > 0} p_u.
PersistenceReport flow_persistence(const StateNetwork& net, std::span<const double> rates,
                                   std::span<const ModuleId> assignment, std::string basis = {});

// Physical node -> category labels (one or more).
struct Classification {
  std::vector<std::set<std::string>> categories;  // indexed by physical id
  std::vector<std::string> unmatched_names;
};

// Reads `name<TAB>category` lines; repeated names add memberships.
Classification read_classification(std::istream& in, std::span<const std::string> physical_names);

struct ExternalPersistence {
  double persistence = 0.0;  // over covered steps
  double coverage = 0.0;     // covered flow / total flow
};

// A step u -> v persists when phys(u) and phys(v) share a category; steps
// touching an unclassified node are not covered. Throws NoCoverage.
ExternalPersistence external_persistence(const StateNetwork& net, std::span<const double> rates,
                                         const Classification& classification);

struct OverlapRow {
  PhysId physical;
  ModuleId module;
  double fraction;
};

// Per physical node, the share of its state visit rates in each module.
// Rows below `threshold` are dropped (0 keeps everything, and then the
// fractions of every physical node sum to 1). Physical nodes without flow get
// no rows.
std::vector<OverlapRow> overlap_table(const StateNetwork& net, std::span<const double> rates,
                                      std::span<const ModuleId> assignment, double threshold = 0.0);

struct AllocationRow {
  std::size_t r;
  PhysId physical;
  std::size_t states;
};

// Lumped state count of every occupied physical node at each r of `schedule`.
std::vector<AllocationRow> state_allocation(std::span<const LumpDendrogram> dendrograms,
                                            std::span<const std::size_t> schedule);

// Number of modules holding at least `threshold` of the total flow.
std::size_t count_modules(const PersistenceReport& report, double threshold = 1e-4);

}  // namespace flowlump
