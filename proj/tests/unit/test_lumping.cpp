#include <doctest.h>

#include <limits>
#include <memory>
#include <sstream>

#include "flowlump/lumping.hpp"
#include "oracles.hpp"

using namespace flowlump;

namespace {

Distribution<PhysId> dist(std::vector<std::pair<PhysId, double>> entries) { return {std::move(entries), false}; }

// Entropy-rate increase of merging blocks a and b of a partition, by
// recomputing both lumped networks from scratch.
double merge_cost(const StateNetwork& net, std::vector<StateId> partition, StateId a, StateId b) {
  auto relabel = [](std::vector<StateId>& p) {
    std::vector<StateId> id(p.size(), kNone);
    StateId next = 0;
    for (auto& x : p) {
      if (id[x] == kNone) id[x] = next++;
      x = id[x];
    }
  };
  relabel(partition);
  double before = oracle::entropy_rate(lumped_network(partition, net));
  StateId ba = partition[a], bb = partition[b];
  for (auto& x : partition)
    if (x == bb) x = ba;
  relabel(partition);
  double after = oracle::entropy_rate(lumped_network(partition, net));
  return after - before;
}

}  // namespace

TEST_CASE("KL divergence oracles") {
  auto p = dist({{0, 0.75}, {1, 0.25}});
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK(kl_divergence(dist({{0, 1.0}}), dist({{0, 0.5}, {1, 0.5}})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(kl_divergence(p, dist({{0, 0.5}, {1, 0.5}})) == doctest::Approx(0.18872187554086717).epsilon(1e-14));
  CHECK_THROWS_AS(kl_divergence(dist({{0, 0.5}, {2, 0.5}}), dist({{0, 1.0}})), Error);
}

TEST_CASE("lump delta oracles") {
  // Physical 0 owns states 0 and 1; state 0 -> physical 1, state 1 -> physical 2.
  auto net = oracle::make_network({0, 0, 1, 2}, {{0, 2, 1.0}, {1, 3, 1.0}});
  CHECK(net.total_weight() == 2.0);
  CHECK(lump_delta(net, 0, 1) == doctest::Approx(1.0).epsilon(1e-15));

  auto same = oracle::make_network({0, 0, 1, 2}, {{0, 2, 1.0}, {0, 3, 3.0}, {1, 2, 2.0}, {1, 3, 6.0}});
  CHECK(lump_delta(same, 0, 1) == doctest::Approx(0.0));

  // A dangling member contributes nothing.
  auto dangling = oracle::make_network({0, 0, 1, 2}, {{0, 2, 1.0}, {0, 3, 1.0}});
  CHECK(lump_delta(dangling, 0, 1) == 0.0);

  CHECK_THROWS_AS(lump_delta(net, 0, 0), Error);
  CHECK_THROWS_AS(lump_delta(net, 0, 2), Error);
}

TEST_CASE("entropy rate oracles") {
  auto chain = oracle::make_network({0, 1, 2}, {{0, 1, 2.0}, {1, 2, 5.0}, {2, 0, 1.0}});
  CHECK(entropy_rate(chain) == 0.0);
  auto uniform = oracle::make_network({0, 1, 2}, {{0, 1, 1.0}, {0, 2, 1.0}});
  CHECK(entropy_rate(uniform) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("dendrogram shapes") {
  auto one = oracle::make_network({0, 1}, {{0, 1, 1.0}});
  std::vector<StateId> s0{0};
  CHECK(build_dendrogram(one, 0, s0).merges.empty());

  auto twins = oracle::make_network({0, 0, 1}, {{0, 2, 1.0}, {1, 2, 3.0}});
  std::vector<StateId> s01{0, 1};
  auto d = build_dendrogram(twins, 0, s01);
  REQUIRE(d.merges.size() == 1);
  CHECK(d.merges[0].delta_bits == 0.0);
  CHECK(d.merges[0].left == 0);
  CHECK(d.merges[0].right == 1);

  // Hub (physical 0) with states 0..3: states 0 and 2 return to physical 1,
  // states 1 and 3 to physical 2.
  auto hub = oracle::make_network({0, 0, 0, 0, 1, 2}, {{0, 4, 1.0}, {1, 5, 1.0}, {2, 4, 2.0}, {3, 5, 1.0}});
  std::vector<StateId> hs{0, 1, 2, 3};
  auto h = build_dendrogram(hub, 0, hs);
  REQUIRE(h.merges.size() == 3);
  CHECK(h.merges[0].delta_bits == 0.0);
  CHECK(h.merges[1].delta_bits == 0.0);
  CHECK(h.merges[0].left == 0);
  CHECK(h.merges[0].right == 2);
  CHECK(h.merges[1].left == 1);
  CHECK(h.merges[1].right == 3);
  CHECK(h.merges[2].delta_bits > 0.0);
}

TEST_CASE("dangling states are folded together first") {
  // States 1 and 3 of physical 0 are dangling.
  auto net = oracle::make_network({0, 0, 0, 0, 1, 2}, {{0, 4, 1.0}, {2, 5, 1.0}, {4, 0, 1.0}});
  std::vector<StateId> s{0, 1, 2, 3};
  auto d = build_dendrogram(net, 0, s);
  REQUIRE(d.merges.size() == 3);
  CHECK(d.merges[0].left == 1);
  CHECK(d.merges[0].right == 3);
  CHECK(d.merges[0].delta_bits == 0.0);
}

TEST_CASE("greedy merges are the exhaustive pair minimum at every step") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = oracle::random_corpus(rng, 4, 25, 3, 5);
    auto net = build_state_network(c, 2);
    auto dendros = build_dendrograms(net);
    for (const auto& d : dendros) {
      if (d.states.size() > 6) continue;
      std::vector<StateId> partition(net.num_states());
      std::iota(partition.begin(), partition.end(), 0);
      std::vector<StateId> alive(d.states.begin(), d.states.end());
      for (const auto& m : d.merges) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < alive.size(); ++i)
          for (std::size_t j = i + 1; j < alive.size(); ++j)
            best = std::min(best, merge_cost(net, partition, alive[i], alive[j]));
        CHECK(m.delta_bits == doctest::Approx(best).epsilon(1e-9).scale(1.0));
        CHECK(merge_cost(net, partition, m.left, m.right) == doctest::Approx(m.delta_bits).epsilon(1e-9).scale(1.0));
        for (auto& x : partition)
          if (x == m.right) x = m.left;
        alive.erase(std::find(alive.begin(), alive.end(), m.right));
      }
    }
  }
}

TEST_CASE("expand_model endpoints and monotone entropy rate") {
  Rng rng(21);
  auto c = oracle::random_corpus(rng, 5, 60, 3, 5);
  auto net = std::make_shared<const StateNetwork>(build_state_network(c, 2));
  auto dendros = build_dendrograms(*net);
  const std::size_t n = dendros.size();
  const std::size_t total = net->num_states();

  auto first = expand_model(dendros, net, n);
  CHECK(first.network.num_states() == n);
  for (StateId u = 0; u < first.network.num_states(); ++u)
    for (StateId v = u + 1; v < first.network.num_states(); ++v)
      CHECK(first.network.physical(u) != first.network.physical(v));

  auto full = expand_model(dendros, net, total);
  for (StateId u = 0; u < total; ++u) CHECK(full.partition[u] == u);
  CHECK(full.entropy_rate_bits == doctest::Approx(entropy_rate(*net)).epsilon(1e-12));

  double previous = first.entropy_rate_bits;
  auto sequence = unlumping_sequence(dendros);
  CHECK(sequence.size() == total - n);
  for (std::size_t r = n + 1; r <= total; ++r) {
    double h = expand_model(dendros, net, r).entropy_rate_bits;
    CHECK(h <= previous + 1e-12);
    previous = h;
  }
  CHECK_THROWS_AS(expand_model(dendros, net, n - 1), Error);
  CHECK_THROWS_AS(expand_model(dendros, net, total + 1), Error);
}

TEST_CASE("first-order model equals the order-1 entropy rate") {
  Rng rng(22);
  auto c = oracle::random_corpus(rng, 6, 80, 3, 3);
  auto net = std::make_shared<const StateNetwork>(build_state_network(c, 2));
  auto dendros = build_dendrograms(*net);
  auto model = expand_model(dendros, net, dendros.size());
  // Order-1 windows of the same corpus, minus each path's first step.
  PathCorpus tails = c;
  for (auto& p : tails.paths) p.nodes.erase(p.nodes.begin());
  auto first = build_state_network(tails, 1);
  CHECK(model.entropy_rate_bits == doctest::Approx(oracle::entropy_rate(first)).epsilon(1e-12));
}

TEST_CASE("the extra state at r = N + 1 goes to the only node with memory") {
  PathCorpus c;
  c.names = {"a", "b", "P", "x", "y"};
  auto add = [&](std::vector<PhysId> nodes, double w) { c.paths.push_back({std::move(nodes), w, {}}); };
  add({0, 2, 0}, 5);  // P remembers where the walk came from
  add({1, 2, 1}, 5);
  add({0, 3, 4}, 2);  // x and y are memoryless
  add({1, 3, 4}, 2);
  add({3, 4, 3}, 1);
  add({0, 4, 3}, 1);
  auto net = std::make_shared<const StateNetwork>(build_state_network(c, 2));
  auto dendros = build_dendrograms(*net);
  auto seq = unlumping_sequence(dendros);
  CHECK(seq.front() == 2);
  auto model = expand_model(dendros, net, dendros.size() + 1);
  std::size_t hub_states = 0;
  for (const auto& s : model.network.states()) hub_states += s.physical == 2;
  CHECK(hub_states == 2);
}

TEST_CASE("lumped network sums weights and keeps flow") {
  Rng rng(23);
  auto c = oracle::random_corpus(rng, 4, 40, 3, 5);
  auto net = build_state_network(c, 2);
  std::vector<StateId> identity(net.num_states());
  std::iota(identity.begin(), identity.end(), 0);
  auto same = lumped_network(identity, net);
  std::ostringstream a, b;
  write_state_network(a, net);
  write_state_network(b, same);
  CHECK(a.str() == b.str());

  auto dendros = build_dendrograms(net);
  auto partition = expand_partition(dendros, net.num_states(), dendros.size() + 2);
  auto lumped = lumped_network(partition, net);
  CHECK(lumped.total_weight() == doctest::Approx(net.total_weight()).epsilon(1e-14));

  std::vector<StateId> bad(net.num_states(), 0);
  CHECK_THROWS_AS(lumped_network(bad, net), Error);
}

TEST_CASE("expand_partition numbers blocks by smallest member") {
  Rng rng(24);
  auto c = oracle::random_corpus(rng, 4, 40, 3, 5);
  auto net = build_state_network(c, 2);
  auto dendros = build_dendrograms(net);
  for (std::size_t r = dendros.size(); r <= net.num_states(); ++r) {
    auto p = expand_partition(dendros, net.num_states(), r);
    StateId next = 0;
    for (StateId s = 0; s < p.size(); ++s) {
      CHECK(p[s] <= next);
      if (p[s] == next) ++next;
    }
    CHECK(next == r);
  }
}

TEST_CASE("duplicated state lumps back with zero loss") {
  auto base = oracle::make_network({0, 0, 1, 2}, {{0, 2, 1.0}, {0, 3, 2.0}, {1, 2, 3.0}, {2, 0, 2.0}, {3, 1, 1.0}});
  // State 4 is a copy of state 0: same targets, weights split 1/3 and 2/3,
  // and the link into state 0 is split as well.
  auto split = oracle::make_network(
      {0, 0, 1, 2, 0},
      {{0, 2, 1.0 / 3}, {0, 3, 2.0 / 3}, {4, 2, 2.0 / 3}, {4, 3, 4.0 / 3}, {1, 2, 3.0}, {2, 0, 1.5}, {2, 4, 0.5}, {3, 1, 1.0}});
  CHECK(lump_delta(split, 0, 4) < 1e-14);
  std::vector<StateId> s{0, 1, 4};
  auto d = build_dendrogram(split, 0, s);
  CHECK(d.merges[0].left == 0);
  CHECK(d.merges[0].right == 4);
  auto back = lumped_network(std::vector<StateId>{0, 1, 2, 3, 0}, split);
  for (StateId u = 0; u < base.num_states(); ++u) {
    auto t1 = base.targets(u), t2 = back.targets(u);
    REQUIRE(t1.size() == t2.size());
    for (std::size_t i = 0; i < t1.size(); ++i) {
      CHECK(t1[i] == t2[i]);
      CHECK(base.weights(u)[i] == doctest::Approx(back.weights(u)[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("unlumping ties go to the smaller physical id") {
  std::vector<LumpDendrogram> d(2);
  d[0].physical = 3;
  d[0].states = {0, 1};
  d[0].merges = {{0, 1, 0.5}};
  d[1].physical = 7;
  d[1].states = {2, 3, 4};
  d[1].merges = {{2, 3, 0.1}, {2, 4, 0.5}};
  auto seq = unlumping_sequence(d);
  CHECK(seq == std::vector<PhysId>{3, 7, 7});
}

TEST_CASE("large physical nodes use the pruned frontier") {
  // One hub seen from 90 contexts.
  PathCorpus c;
  for (int i = 0; i < 100; ++i) c.names.push_back("n" + std::to_string(i));
  Rng rng(5);
  for (int i = 1; i <= 90; ++i)
    for (int rep = 0; rep < 3; ++rep)
      c.paths.push_back({{static_cast<PhysId>(i), 0, static_cast<PhysId>(1 + rng.below(99))}, 1.0, {}});
  auto net = build_state_network(c, 2);
  auto groups = net.states_by_physical();
  REQUIRE(groups[0].size() == 90);
  auto d = build_dendrogram(net, 0, groups[0]);
  CHECK(d.merges.size() == 89);
  std::set<StateId> absorbed;
  for (const auto& m : d.merges) {
    CHECK(m.delta_bits >= 0.0);
    CHECK(m.left < m.right);
    CHECK(absorbed.insert(m.right).second);
    CHECK_FALSE(absorbed.count(m.left));
  }
  LumpOptions exact;
  exact.exact_limit = 1000;
  CHECK(build_dendrogram(net, 0, groups[0], exact).merges.size() == 89);
}

TEST_CASE("dendrogram files round-trip") {
  Rng rng(25);
  auto c = oracle::random_corpus(rng, 5, 50, 3, 5);
  auto net = build_state_network(c, 2);
  auto dendros = build_dendrograms(net);
  std::ostringstream a;
  write_dendrograms(a, dendros);
  std::istringstream in(a.str());
  auto back = read_dendrograms(in);
  std::ostringstream b;
  write_dendrograms(b, back);
  CHECK(a.str() == b.str());

  std::istringstream broken("physical 0 states 2 0 1\n");
  CHECK_THROWS_AS(read_dendrograms(broken), Error);
}
