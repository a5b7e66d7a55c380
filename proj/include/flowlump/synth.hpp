#pragma once

#include <cstdint>

#include "flowlump/corpus.hpp"

namespace flowlump {

// Second-order random walk with planted modules and memory at hubs.
//
// Non-hub nodes are dealt to modules round robin. From a non-hub node the walk
// steps to a uniformly chosen hub with probability hub_prob, to a non-hub node
// of another module with probability leak, and otherwise to another node of
// its own module. From a hub it returns to the module it came from with
// probability rho and otherwise moves to one of the other modules, chosen
// uniformly. rho = 1 / modules makes the walk first order.
struct SynthParams {
  std::size_t physical = 50;  // total physical nodes including hubs
  std::size_t modules = 4;
  std::size_t hubs = 4;
  double rho = 0.9;
  std::size_t length = 3;     // nodes per path
  std::size_t paths = 100000;
  double hub_prob = 0.25;
  double leak = 0.05;
  std::size_t burn_in = 10;   // unrecorded steps before each path
};

// Hubs are named hub1..hubH; module m's nodes are m<m>_<j> (1-based). Every
// path has weight 1. Each walk starts at a uniformly chosen non-hub node and
// takes `burn_in` unrecorded steps, so recorded paths may start anywhere,
// hubs included. Throws
// InvalidArgument for probabilities outside [0, 1], hub_prob + leak > 1, or
// fewer than two non-hub nodes per module.
PathCorpus synthesize(const SynthParams& params, std::uint64_t seed);

// Module of each physical node of a synthesized corpus (kNone for hubs).
std::vector<std::uint32_t> synth_modules(const SynthParams& params);

}  // namespace flowlump
