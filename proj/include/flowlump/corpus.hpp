#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowlump/common.hpp"

namespace flowlump {

struct PathRecord {
  std::vector<PhysId> nodes;  // length >= 2
  double weight = 1.0;        // > 0
  std::string group_key;      // empty unless parsed with `grouped`
};

// Weighted multi-step pathways over physical nodes. Physical ids are dense
// (0..N-1); `names` maps them back to the labels found in the input.
struct PathCorpus {
  std::vector<std::string> names;
  std::vector<PathRecord> paths;

  std::size_t num_physical() const { return names.size(); }
  double total_weight() const;

  // Paths at `indices`, sharing this corpus' name table so physical ids stay
  // comparable across subsets.
  PathCorpus subset(std::span<const std::size_t> indices) const;
  std::optional<PhysId> find(std::string_view name) const;
};

struct ParseOptions {
  bool grouped = false;  // first column of each path line is a group key
};

struct LineDiagnostic {
  std::size_t line = 0;
  std::string message;
};

struct ParseResult {
  PathCorpus corpus;
  std::vector<LineDiagnostic> rejected;
};

// Reads `n1 n2 ... nk weight` lines, optionally under `*Vertices` / `*Paths`
// headers. Bad lines are collected in `rejected`; throws EmptyCorpus when no
// line survives.
ParseResult parse_paths(std::istream& in, const ParseOptions& options = {});
ParseResult parse_paths_file(const std::string& path, const ParseOptions& options = {});

// Writes a `*Vertices` / `*Paths` file that parses back to the same names,
// paths and weights.
void write_paths(std::ostream& out, const PathCorpus& corpus);

// Splits a line into whitespace separated tokens; double-quoted tokens may
// contain spaces.
std::vector<std::string> tokenize(std::string_view line);

// ---------------------------------------------------------------------------
// State networks

struct StateNode {
  StateId id = 0;
  PhysId physical = 0;
  std::vector<PhysId> context;   // previous physical nodes, oldest first
  std::vector<StateId> members;  // original states lumped into this one
};

struct Link {
  StateId target;
  double weight;
};

struct LinkTriple {
  StateId source;
  StateId target;
  double weight;
};

// Immutable weighted directed network over state nodes, stored as CSR with
// targets sorted per source. w_u is the summed out-weight of u.
class StateNetwork {
 public:
  StateNetwork() = default;
  // Duplicate (source, target) triples are summed in input order.
  StateNetwork(std::vector<std::string> physical_names, std::vector<StateNode> states,
               std::vector<LinkTriple> links, int order);

  int order() const { return order_; }
  std::size_t num_states() const { return states_.size(); }
  std::size_t num_physical() const { return names_.size(); }
  std::size_t num_links() const { return targets_.size(); }
  const std::vector<std::string>& physical_names() const { return names_; }
  const std::vector<StateNode>& states() const { return states_; }
  const StateNode& state(StateId u) const { return states_[u]; }
  PhysId physical(StateId u) const { return states_[u].physical; }

  std::span<const StateId> targets(StateId u) const;
  std::span<const double> weights(StateId u) const;
  double out_weight(StateId u) const { return out_weight_[u]; }
  bool is_dangling(StateId u) const { return out_weight_[u] <= 0.0; }
  // Sum of w_u over all states.
  double total_weight() const { return total_weight_; }

  // Lookup by (context, physical); nullopt when unseen.
  std::optional<StateId> find_state(std::span<const PhysId> context, PhysId physical) const;

  // States of each physical node in id order.
  std::vector<std::vector<StateId>> states_by_physical() const;
  // Physical nodes that own at least one state.
  std::size_t num_occupied_physical() const;

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<PhysId>& key) const noexcept;
  };

  int order_ = 1;
  std::vector<std::string> names_;
  std::vector<StateNode> states_;
  std::vector<std::size_t> offsets_{0};
  std::vector<StateId> targets_;
  std::vector<double> weights_;
  std::vector<double> out_weight_;
  double total_weight_ = 0.0;
  std::unordered_map<std::vector<PhysId>, StateId, KeyHash> index_;
};

struct BuildStats {
  std::size_t windows = 0;
  std::size_t skipped_paths = 0;  // shorter than order + 1
  double window_weight = 0.0;
};

// Order-m state network: every window X_{t-m..t} of a path adds the path
// weight to the link (X_{t-m..t-1}) -> (X_{t-m+1..t}). Throws on m < 1 or when
// no path has a usable window.
StateNetwork build_state_network(const PathCorpus& corpus, int order,
                                 BuildStats* stats = nullptr);

template <class Key>
struct Distribution {
  std::vector<std::pair<Key, double>> entries;  // sorted by key
  bool dangling = false;
};

// P_uv = w_uv / w_u over target states, or a dangling marker when w_u = 0.
Distribution<StateId> transition_probabilities(const StateNetwork& net, StateId u);

// P_uj = sum of P_uv over targets v owned by physical node j.
Distribution<PhysId> physical_projection(const StateNetwork& net, StateId u);

enum class RateMode { Empirical, Stationary };

struct VisitRateOptions {
  RateMode mode = RateMode::Empirical;
  double tolerance = 1e-12;  // L1 change between iterates
  std::size_t max_iterations = 1000;
};

struct VisitRates {
  std::vector<double> rates;
  bool converged = true;
  std::size_t iterations = 0;
  std::string warning;
};

// Empirical rates are w_u / sum w. Stationary rates solve pi = pi P on the
// non-dangling states by lazy power iteration; see the README for how links
// into dangling states are handled. Dangling states always get rate 0.
VisitRates visit_rates(const StateNetwork& net, const VisitRateOptions& options = {});

// Text form: `*Vertices`, `*States` (stateId physicalId "context"), `*Links`
// (u v w). Weights use 17 significant digits, so write -> read -> write is
// byte-identical.
void write_state_network(std::ostream& out, const StateNetwork& net);
StateNetwork read_state_network(std::istream& in);

}  // namespace flowlump
