#include "flowlump/synth.hpp"

#include <string>

namespace flowlump {

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::InvalidArgument, std::string(name) + " must lie in [0, 1]");
}

}  // namespace

std::vector<std::uint32_t> synth_modules(const SynthParams& params) {
  std::vector<std::uint32_t> module(params.physical, kNone);
  for (std::size_t i = params.hubs; i < params.physical; ++i)
    module[i] = static_cast<std::uint32_t>((i - params.hubs) % params.modules);
  return module;
}

PathCorpus synthesize(const SynthParams& params, std::uint64_t seed) {
  check_probability(params.rho, "rho");
  check_probability(params.hub_prob, "hub probability");
  check_probability(params.leak, "leak probability");
  if (params.hub_prob + params.leak > 1.0)
    throw Error(ErrorKind::InvalidArgument, "hub probability plus leak must not exceed 1");
  if (params.modules == 0) throw Error(ErrorKind::InvalidArgument, "need at least one module");
  if (params.physical < params.hubs + 2 * params.modules)
    throw Error(ErrorKind::InvalidArgument, "need at least two non-hub nodes per module");
  if (params.length < 2) throw Error(ErrorKind::InvalidArgument, "paths need at least two nodes");
  if (params.modules == 1 && (params.leak > 0.0 || (params.hubs > 0 && params.rho < 1.0)))
    throw Error(ErrorKind::InvalidArgument, "a single module cannot leak flow to other modules");

  const auto module = synth_modules(params);
  std::vector<std::vector<PhysId>> members(params.modules);
  for (std::size_t i = params.hubs; i < params.physical; ++i) members[module[i]].push_back(static_cast<PhysId>(i));

  PathCorpus corpus;
  corpus.names.reserve(params.physical);
  for (std::size_t i = 0; i < params.physical; ++i) {
    if (i < params.hubs)
      corpus.names.push_back("hub" + std::to_string(i + 1));
    else
      corpus.names.push_back("m" + std::to_string(module[i] + 1) + "_" +
                             std::to_string((i - params.hubs) / params.modules + 1));
  }

  Rng rng(seed);
  const double hub_prob = params.hubs > 0 ? params.hub_prob : 0.0;
  const std::size_t non_hubs = params.physical - params.hubs;
  auto other_module = [&](std::uint32_t m) {
    auto pick = static_cast<std::uint32_t>(rng.below(params.modules - 1));
    return pick >= m ? pick + 1 : pick;
  };
  auto node_in = [&](std::uint32_t m) { return members[m][rng.below(members[m].size())]; };

  PhysId current = 0;
  std::uint32_t origin = 0;
  auto step = [&]() {
    PhysId next;
    if (current < params.hubs) {
      std::uint32_t m = rng.uniform() < params.rho ? origin : other_module(origin);
      next = node_in(m);
    } else {
      const double u = rng.uniform();
      if (u < hub_prob) {
        next = static_cast<PhysId>(rng.below(params.hubs));
      } else if (u < hub_prob + params.leak) {
        next = node_in(other_module(origin));
      } else {
        const auto& own = members[origin];
        auto pick = rng.below(own.size() - 1);
        next = own[pick];
        if (next == current) next = own.back();
      }
    }
    if (next >= params.hubs) origin = module[next];
    current = next;
  };

  corpus.paths.reserve(params.paths);
  for (std::size_t p = 0; p < params.paths; ++p) {
    current = static_cast<PhysId>(params.hubs + rng.below(non_hubs));
    origin = module[current];
    for (std::size_t t = 0; t < params.burn_in; ++t) step();
    PathRecord path;
    path.nodes.reserve(params.length);
    path.nodes.push_back(current);
    while (path.nodes.size() < params.length) {
      step();
      path.nodes.push_back(current);
    }
    corpus.paths.push_back(std::move(path));
  }
  return corpus;
}

}  // namespace flowlump
