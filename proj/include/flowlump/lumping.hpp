#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "flowlump/common.hpp"
#include "flowlump/corpus.hpp"

namespace flowlump {

// D(p || q) in bits over sparse distributions sorted by key. Requires
// support(p) to lie inside support(q).
double kl_divergence(const Distribution<PhysId>& p, const Distribution<PhysId>& q);

// Entropy-rate increase (bits/step) of lumping states u and v of one physical
// node: [w_u D(P_u || P_uv) + w_v D(P_v || P_uv)] / W, with P over physical
// targets and W the network's total out-weight. Dangling members contribute 0.
double lump_delta(const StateNetwork& net, StateId u, StateId v);

// H = sum_u (w_u / W) H(physical_projection(u)); dangling states add nothing.
double entropy_rate(const StateNetwork& net);

struct Merge {
  StateId left;   // surviving block id (smaller representative)
  StateId right;  // absorbed block id
  double delta_bits;
};

// Greedy merge history of one physical node's states, from k blocks down to 1.
// Block ids are the smallest original state id in the block.
struct LumpDendrogram {
  PhysId physical = 0;
  std::vector<StateId> states;
  std::vector<Merge> merges;
};

struct LumpOptions {
  // Physical nodes with at most this many states use the exact all-pairs
  // frontier; larger ones start from a pruned candidate set.
  std::size_t exact_limit = 64;
  // Nearest neighbours by out-link Jaccard similarity kept per state when
  // pruning.
  std::size_t candidate_neighbors = 32;
};

LumpDendrogram build_dendrogram(const StateNetwork& net, PhysId physical,
                                std::span<const StateId> states, const LumpOptions& options = {});

// One dendrogram per occupied physical node, ordered by physical id.
std::vector<LumpDendrogram> build_dendrograms(const StateNetwork& net, const LumpOptions& options = {},
                                             const ParallelFor& parallel = sequential_for);

// Physical node gaining a state at each unlumping step: element i turns the
// (N+i)-state model into the (N+i+1)-state model. Largest delta first; per
// physical node only its most recent remaining merge is eligible; ties go to
// the smaller physical id.
std::vector<PhysId> unlumping_sequence(std::span<const LumpDendrogram> dendrograms);

// Partition of the original states (original id -> lumped id) with exactly r
// blocks. Lumped ids follow the order of each block's smallest member.
std::vector<StateId> expand_partition(std::span<const LumpDendrogram> dendrograms,
                                      std::size_t num_states, std::size_t r);

// Lumped network: w_uv = sum over u' in u, v' in v of w_u'v'. Each lumped
// state takes its physical node and context from its smallest member.
StateNetwork lumped_network(std::span<const StateId> partition, const StateNetwork& original);

struct SparseModel {
  std::shared_ptr<const StateNetwork> original;
  std::vector<StateId> partition;
  std::size_t r = 0;
  StateNetwork network;
  double entropy_rate_bits = 0.0;
};

// Throws OutOfRange unless (occupied physical nodes) <= r <= original states.
SparseModel expand_model(std::span<const LumpDendrogram> dendrograms,
                         std::shared_ptr<const StateNetwork> original, std::size_t r);

// Lines `merge left right delta` grouped under `physical <id> states <k> ids...`.
void write_dendrograms(std::ostream& out, std::span<const LumpDendrogram> dendrograms);
std::vector<LumpDendrogram> read_dendrograms(std::istream& in);

}  // namespace flowlump
