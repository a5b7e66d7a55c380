#include "flowlump/mapeq.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace flowlump {

namespace {

using PhysList = std::vector<std::pair<PhysId, double>>;

void merge_phys(PhysList& list) {
  std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t out = 0;
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (out > 0 && list[out - 1].first == list[i].first)
      list[out - 1].second += list[i].second;
    else
      list[out++] = list[i];
  }
  list.resize(out);
}

// Renumbers ids densely in first-appearance order.
std::vector<ModuleId> compact(std::span<const ModuleId> ids, std::size_t* count = nullptr) {
  std::unordered_map<ModuleId, ModuleId> remap;
  std::vector<ModuleId> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = remap.emplace(ids[i], static_cast<ModuleId>(remap.size())).first;
    out[i] = it->second;
  }
  if (count) *count = remap.size();
  return out;
}

double codebook_cost(double total, double sum_plogp) { return plogp(total) - sum_plogp; }

// Incremental two-level map equation over a FlowGraph whose nodes may be
// aggregates of several state nodes.
class ModuleSearch {
 public:
  explicit ModuleSearch(const FlowGraph& graph) : g_(graph) {
    const std::size_t n = g_.size();
    module_.resize(n);
    exit_.assign(n, 0.0);
    flow_.assign(n, 0.0);
    members_.assign(n, 0);
    out_to_.assign(n, 0.0);
    in_from_.assign(n, 0.0);
    mark_.assign(n, 0);
    std::size_t physical = 0;
    for (const auto& list : g_.physical_flow)
      for (const auto& entry : list) physical = std::max<std::size_t>(physical, entry.first + 1);
    phys_modules_.resize(physical);
  }

  void init(std::span<const ModuleId> initial) {
    const std::size_t n = g_.size();
    std::fill(exit_.begin(), exit_.end(), 0.0);
    std::fill(flow_.begin(), flow_.end(), 0.0);
    std::fill(members_.begin(), members_.end(), 0);
    phys_.clear();
    for (auto& list : phys_modules_) list.clear();
    for (std::size_t u = 0; u < n; ++u) {
      module_[u] = initial[u];
      ++members_[initial[u]];
      flow_[initial[u]] += g_.node_flow[u];
      for (const auto& [phys, f] : g_.physical_flow[u]) {
        auto [it, fresh] = phys_.try_emplace(key(initial[u], phys), 0.0);
        it->second += f;
        if (fresh) phys_modules_[phys].push_back(initial[u]);
      }
    }
    for (std::size_t u = 0; u < n; ++u)
      for (const auto& arc : g_.out[u])
        if (module_[arc.node] != module_[u]) exit_[module_[u]] += arc.flow;
    empty_.clear();
    for (std::size_t m = n; m-- > 0;)
      if (members_[m] == 0) empty_.push_back(static_cast<ModuleId>(m));
    recompute_sums();
  }

  void init_singletons() {
    std::vector<ModuleId> ids(g_.size());
    std::iota(ids.begin(), ids.end(), 0);
    init(ids);
  }

  double codelength() const {
    return plogp(total_exit_) - 2.0 * sum_plogp_exit_ - sum_plogp_phys_ + sum_plogp_exit_flow_;
  }

  const std::vector<ModuleId>& modules() const { return module_; }

  // One round of passes over all nodes in random order; returns the total
  // code length decrease.
  double move_nodes(Rng& rng, bool allow_empty, const OptimizeOptions& options, std::size_t& accepted) {
    const std::size_t n = g_.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    double total_gain = 0.0;
    for (std::size_t pass = 0; pass < 200; ++pass) {
      rng.shuffle(order);
      double gain = 0.0;
      std::size_t moved = 0;
      for (std::uint32_t u : order) {
        const ModuleId from = module_[u];
        gather(u);
        Eval best{0.0, 0.0, 0.0, 0.0};
        ModuleId best_module = from;
        for (ModuleId m : touched_) {
          if (m == from) continue;
          Eval e = evaluate(u, from, m);
          // touched_ is sorted, so ties keep the smallest module id.
          if (e.delta < best.delta - 1e-15) {
            best = e;
            best_module = m;
          }
        }
        if (allow_empty && members_[from] > 1 && !empty_.empty()) {
          ModuleId m = empty_.back();
          Eval e = evaluate(u, from, m);
          if (e.delta < best.delta - 1e-15) {
            best = e;
            best_module = m;
          }
        }
        clear_gather();
        if (best_module != from && best.delta < -1e-14) {
          apply(u, from, best_module, best);
          gain -= best.delta;
          ++moved;
          ++accepted;
          if (options.verify_interval > 0 && accepted % options.verify_interval == 0) verify();
        }
      }
      recompute_sums();
      total_gain += gain;
      if (moved == 0 || gain < options.min_improvement) break;
    }
    return total_gain;
  }

  void verify() const {
    double fresh = map_equation(g_, module_);
    double tracked = codelength();
    if (std::abs(fresh - tracked) > 1e-9)
      throw Error(ErrorKind::InvalidArgument, "incremental map equation drifted: " + format_double(tracked) +
                                                  " vs " + format_double(fresh));
  }

 private:
  struct Eval {
    double delta;
    double exit_from;
    double exit_to;
    double phys_delta;  // change in sum of plogp over physical entries
  };

  static std::uint64_t key(ModuleId m, PhysId p) { return (static_cast<std::uint64_t>(m) << 32) | p; }

  double phys_rate(ModuleId m, PhysId p) const {
    auto it = phys_.find(key(m, p));
    return it == phys_.end() ? 0.0 : it->second;
  }

  void gather(std::uint32_t u) {
    touched_.clear();
    auto touch = [&](ModuleId m) {
      if (!mark_[m]) {
        mark_[m] = 1;
        touched_.push_back(m);
      }
    };
    touch(module_[u]);
    for (const auto& arc : g_.out[u]) {
      ModuleId m = module_[arc.node];
      touch(m);
      out_to_[m] += arc.flow;
    }
    for (const auto& arc : g_.in[u]) {
      ModuleId m = module_[arc.node];
      touch(m);
      in_from_[m] += arc.flow;
    }
    // Modules sharing a physical node with u can lower the code length without
    // any link to u, since co-modular states of one physical node share a
    // codeword.
    for (const auto& entry : g_.physical_flow[u])
      for (ModuleId m : phys_modules_[entry.first]) touch(m);
    std::sort(touched_.begin(), touched_.end());
  }

  void clear_gather() {
    for (ModuleId m : touched_) {
      mark_[m] = 0;
      out_to_[m] = 0.0;
      in_from_[m] = 0.0;
    }
  }

  Eval evaluate(std::uint32_t u, ModuleId from, ModuleId to) const {
    const double out_u = g_.out_flow[u];
    const double node_flow = g_.node_flow[u];
    const double e_from = exit_[from], e_to = exit_[to];
    const double f_from = flow_[from], f_to = flow_[to];
    double e_from_new = members_[from] == 1 ? 0.0 : e_from - (out_u - out_to_[from]) + in_from_[from];
    double e_to_new = e_to + (out_u - out_to_[to]) - in_from_[to];
    e_from_new = std::max(0.0, e_from_new);
    e_to_new = std::max(0.0, e_to_new);
    const double f_from_new = members_[from] == 1 ? 0.0 : f_from - node_flow;
    const double f_to_new = f_to + node_flow;

    double phys_delta = 0.0;
    for (const auto& [phys, f] : g_.physical_flow[u]) {
      double a = phys_rate(from, phys), b = phys_rate(to, phys);
      double a_new = members_[from] == 1 ? 0.0 : std::max(0.0, a - f);
      phys_delta += plogp(a_new) - plogp(a) + plogp(b + f) - plogp(b);
    }
    const double total_new = total_exit_ - e_from - e_to + e_from_new + e_to_new;
    double delta = plogp(total_new) - plogp(total_exit_);
    delta -= 2.0 * (plogp(e_from_new) + plogp(e_to_new) - plogp(e_from) - plogp(e_to));
    delta -= phys_delta;
    delta += plogp(e_from_new + f_from_new) + plogp(e_to_new + f_to_new) - plogp(e_from + f_from) -
             plogp(e_to + f_to);
    return {delta, e_from_new, e_to_new, phys_delta};
  }

  void apply(std::uint32_t u, ModuleId from, ModuleId to, const Eval& e) {
    if (members_[to] == 0) {
      if (!empty_.empty() && empty_.back() == to) {
        empty_.pop_back();
      } else {
        auto it = std::find(empty_.begin(), empty_.end(), to);
        if (it != empty_.end()) empty_.erase(it);
      }
    }
    const double node_flow = g_.node_flow[u];
    sum_plogp_exit_ += plogp(e.exit_from) + plogp(e.exit_to) - plogp(exit_[from]) - plogp(exit_[to]);
    sum_plogp_exit_flow_ -= plogp(exit_[from] + flow_[from]) + plogp(exit_[to] + flow_[to]);
    total_exit_ += e.exit_from + e.exit_to - exit_[from] - exit_[to];
    sum_plogp_phys_ += e.phys_delta;

    --members_[from];
    ++members_[to];
    exit_[from] = e.exit_from;
    exit_[to] = e.exit_to;
    flow_[from] = members_[from] == 0 ? 0.0 : flow_[from] - node_flow;
    flow_[to] += node_flow;
    for (const auto& [phys, f] : g_.physical_flow[u]) {
      auto it = phys_.find(key(from, phys));
      if (it != phys_.end()) {
        it->second -= f;
        if (members_[from] == 0 || it->second <= 0.0) {
          phys_.erase(it);
          auto& list = phys_modules_[phys];
          list.erase(std::find(list.begin(), list.end(), from));
        }
      }
      auto [to_it, fresh] = phys_.try_emplace(key(to, phys), 0.0);
      to_it->second += f;
      if (fresh) phys_modules_[phys].push_back(to);
    }
    if (members_[from] == 0) {
      exit_[from] = 0.0;
      empty_.push_back(from);
    }
    sum_plogp_exit_flow_ += plogp(exit_[from] + flow_[from]) + plogp(exit_[to] + flow_[to]);
    module_[u] = to;
  }

  void recompute_sums() {
    total_exit_ = sum_plogp_exit_ = sum_plogp_phys_ = sum_plogp_exit_flow_ = 0.0;
    for (std::size_t m = 0; m < exit_.size(); ++m) {
      if (members_[m] == 0) continue;
      total_exit_ += exit_[m];
      sum_plogp_exit_ += plogp(exit_[m]);
      sum_plogp_exit_flow_ += plogp(exit_[m] + flow_[m]);
    }
    for (const auto& [k, f] : phys_) sum_plogp_phys_ += plogp(f);
  }

  const FlowGraph& g_;
  std::vector<ModuleId> module_;
  std::vector<double> exit_, flow_;
  std::vector<std::uint32_t> members_;
  std::unordered_map<std::uint64_t, double> phys_;
  std::vector<std::vector<ModuleId>> phys_modules_;  // modules holding flow of each physical node
  std::vector<ModuleId> empty_;
  double total_exit_ = 0.0, sum_plogp_exit_ = 0.0, sum_plogp_phys_ = 0.0, sum_plogp_exit_flow_ = 0.0;
  std::vector<double> out_to_, in_from_;
  std::vector<char> mark_;
  std::vector<ModuleId> touched_;
};

FlowGraph aggregate(const FlowGraph& g, std::span<const ModuleId> module, std::size_t k) {
  FlowGraph out;
  out.node_flow.assign(k, 0.0);
  out.physical_flow.resize(k);
  out.out.resize(k);
  out.in.resize(k);
  out.out_flow.assign(k, 0.0);
  std::vector<std::tuple<ModuleId, ModuleId, double>> arcs;
  for (std::size_t u = 0; u < g.size(); ++u) {
    ModuleId m = module[u];
    out.node_flow[m] += g.node_flow[u];
    auto& pl = out.physical_flow[m];
    pl.insert(pl.end(), g.physical_flow[u].begin(), g.physical_flow[u].end());
    for (const auto& arc : g.out[u])
      if (module[arc.node] != m) arcs.emplace_back(m, module[arc.node], arc.flow);
  }
  for (auto& pl : out.physical_flow) merge_phys(pl);
  std::stable_sort(arcs.begin(), arcs.end(), [](const auto& a, const auto& b) {
    return std::get<0>(a) != std::get<0>(b) ? std::get<0>(a) < std::get<0>(b) : std::get<1>(a) < std::get<1>(b);
  });
  for (std::size_t i = 0; i < arcs.size();) {
    auto [s, t, f] = arcs[i++];
    while (i < arcs.size() && std::get<0>(arcs[i]) == s && std::get<1>(arcs[i]) == t) f += std::get<2>(arcs[i++]);
    out.out[s].push_back({t, f});
    out.in[t].push_back({s, f});
    out.out_flow[s] += f;
  }
  return out;
}

std::vector<ModuleId> louvain(const FlowGraph& leaf, const std::vector<ModuleId>* initial, Rng& rng,
                              const OptimizeOptions& options, std::size_t& accepted) {
  const std::size_t n = leaf.size();
  std::vector<ModuleId> leaf_node(n);
  std::iota(leaf_node.begin(), leaf_node.end(), 0);
  FlowGraph storage;
  const FlowGraph* g = &leaf;
  bool first = true;
  while (true) {
    ModuleSearch search(*g);
    if (first && initial) {
      std::size_t k = 0;
      search.init(compact(*initial, &k));
    } else {
      search.init_singletons();
    }
    search.move_nodes(rng, first && initial != nullptr, options, accepted);
    std::size_t k = 0;
    auto mods = compact(search.modules(), &k);
    for (auto& x : leaf_node) x = mods[x];
    if (k == g->size() || k <= 1) break;
    FlowGraph next = aggregate(*g, mods, k);
    storage = std::move(next);
    g = &storage;
    first = false;
  }
  return leaf_node;
}

// Induced flow graph on `states` keeping only internal arcs.
FlowGraph induced(const FlowGraph& g, std::span<const StateId> states) {
  std::unordered_map<StateId, std::uint32_t> local;
  for (std::size_t i = 0; i < states.size(); ++i) local.emplace(states[i], static_cast<std::uint32_t>(i));
  FlowGraph out;
  const std::size_t k = states.size();
  out.node_flow.resize(k);
  out.physical_flow.resize(k);
  out.out.resize(k);
  out.in.resize(k);
  out.out_flow.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    StateId s = states[i];
    out.node_flow[i] = g.node_flow[s];
    out.physical_flow[i] = g.physical_flow[s];
    for (const auto& arc : g.out[s]) {
      auto it = local.find(arc.node);
      if (it == local.end()) continue;
      out.out[i].push_back({it->second, arc.flow});
      out.in[it->second].push_back({static_cast<std::uint32_t>(i), arc.flow});
      out.out_flow[i] += arc.flow;
    }
  }
  return out;
}

// Splits every module into submodules found by a search restricted to it, then
// moves whole submodules between modules starting from `current`. This escapes
// local optima where a group of states is only worth moving together.
std::vector<ModuleId> coarse_tune(const FlowGraph& graph, const std::vector<ModuleId>& current, Rng& rng,
                                  const OptimizeOptions& options, std::size_t& accepted) {
  std::size_t k = 0;
  const auto modules = compact(current, &k);
  std::vector<std::vector<StateId>> members(k);
  for (StateId u = 0; u < graph.size(); ++u) members[modules[u]].push_back(u);

  std::vector<ModuleId> sub_of(graph.size());
  std::vector<ModuleId> parent;
  for (std::size_t m = 0; m < k; ++m) {
    std::vector<ModuleId> local(members[m].size(), 0);
    if (members[m].size() > 1) {
      // One level of local moves: the full recursion tends to rebuild the
      // whole module as a single block.
      FlowGraph sub = induced(graph, members[m]);
      ModuleSearch search(sub);
      search.init_singletons();
      search.move_nodes(rng, false, options, accepted);
      local = search.modules();
    }
    std::size_t count = 0;
    local = compact(local, &count);
    const auto base = static_cast<ModuleId>(parent.size());
    for (std::size_t i = 0; i < members[m].size(); ++i) sub_of[members[m][i]] = base + local[i];
    parent.insert(parent.end(), count, static_cast<ModuleId>(m));
  }
  if (parent.size() == k) return current;

  FlowGraph coarse = aggregate(graph, sub_of, parent.size());
  ModuleSearch search(coarse);
  search.init(parent);
  search.move_nodes(rng, true, options, accepted);
  std::vector<ModuleId> out(graph.size());
  for (StateId u = 0; u < graph.size(); ++u) out[u] = search.modules()[sub_of[u]];
  return out;
}

struct TrialResult {
  std::vector<ModuleId> assignment;
  double codelength;
};

// Louvain search over the states of each physical node grouped together,
// projected back to the states.
std::vector<ModuleId> physical_start(const FlowGraph& graph, Rng& rng, const OptimizeOptions& options,
                                     std::size_t& accepted) {
  std::vector<ModuleId> group(graph.size());
  std::map<PhysId, ModuleId> id_of;
  ModuleId next = 0;
  for (StateId u = 0; u < graph.size(); ++u) {
    // Nodes without physical flow stay on their own.
    if (graph.physical_flow[u].size() != 1) {
      group[u] = next++;
      continue;
    }
    auto [it, fresh] = id_of.emplace(graph.physical_flow[u].front().first, next);
    if (fresh) ++next;
    group[u] = it->second;
  }
  FlowGraph coarse = aggregate(graph, group, next);
  auto modules = louvain(coarse, nullptr, rng, options, accepted);
  std::vector<ModuleId> out(graph.size());
  for (StateId u = 0; u < graph.size(); ++u) out[u] = modules[group[u]];
  return out;
}

enum class Start { Singletons, Physical, OneModule };

// Louvain from the given start, then alternating fine-tuning (leaf moves from
// the current modules) and coarse-tuning (submodule moves) until neither
// helps. The one-module start splits states off into new modules top down.
TrialResult run_trial(const FlowGraph& graph, std::uint64_t seed, const OptimizeOptions& options, Start start) {
  Rng rng(seed);
  std::size_t accepted = 0;
  std::vector<ModuleId> best;
  if (start == Start::Physical) {
    best = physical_start(graph, rng, options, accepted);
  } else if (start == Start::OneModule) {
    std::vector<ModuleId> one(graph.size(), 0);
    best = louvain(graph, &one, rng, options, accepted);
  } else {
    best = louvain(graph, nullptr, rng, options, accepted);
  }
  double best_l = map_equation(graph, best);
  for (std::size_t round = 0; round < options.max_fine_tune_rounds; ++round) {
    bool improved = false;
    for (int step = 0; step < 2; ++step) {
      std::vector<ModuleId> start = step == 0 ? best : coarse_tune(graph, best, rng, options, accepted);
      auto next = louvain(graph, &start, rng, options, accepted);
      double l = map_equation(graph, next);
      if (l < best_l - options.min_improvement) improved = true;
      if (l < best_l) {
        best = std::move(next);
        best_l = l;
      }
    }
    if (!improved) break;
  }
  return {std::move(best), best_l};
}

// Fills flow, exit, enter and aggregated physical flows of `node` and its
// subtree; returns the subtree's states.
std::vector<StateId> fill_flows(const FlowGraph& g, ModuleNode& node, std::vector<char>& inside) {
  std::vector<StateId> states;
  if (node.children.empty()) {
    states = node.states;
  } else {
    for (auto& c : node.children) {
      auto sub = fill_flows(g, c, inside);
      states.insert(states.end(), sub.begin(), sub.end());
    }
  }
  for (StateId s : states) inside[s] = 1;
  node.flow = node.exit_flow = node.enter_flow = 0.0;
  PhysList phys;
  for (StateId s : states) {
    node.flow += g.node_flow[s];
    phys.insert(phys.end(), g.physical_flow[s].begin(), g.physical_flow[s].end());
    for (const auto& arc : g.out[s])
      if (!inside[arc.node]) node.exit_flow += arc.flow;
    for (const auto& arc : g.in[s])
      if (!inside[arc.node]) node.enter_flow += arc.flow;
  }
  for (StateId s : states) inside[s] = 0;
  merge_phys(phys);
  node.physical_flows.clear();
  for (const auto& [p, f] : phys) node.physical_flows.push_back({p, f});
  std::stable_sort(node.physical_flows.begin(), node.physical_flows.end(),
                   [](const PhysicalFlow& a, const PhysicalFlow& b) { return a.flow > b.flow; });
  return states;
}

StateId min_state(const ModuleNode& node) {
  StateId best = kNone;
  if (node.children.empty()) {
    for (StateId s : node.states) best = std::min(best, s);
  } else {
    for (const auto& c : node.children) best = std::min(best, min_state(c));
  }
  return best;
}

void sort_tree(const FlowGraph& g, std::vector<ModuleNode>& nodes) {
  for (auto& n : nodes) {
    if (n.children.empty()) {
      std::stable_sort(n.states.begin(), n.states.end(), [&](StateId a, StateId b) {
        if (g.node_flow[a] != g.node_flow[b]) return g.node_flow[a] > g.node_flow[b];
        return a < b;
      });
    } else {
      sort_tree(g, n.children);
    }
  }
  std::vector<std::pair<StateId, std::size_t>> keys;
  for (std::size_t i = 0; i < nodes.size(); ++i) keys.emplace_back(min_state(nodes[i]), i);
  std::vector<std::size_t> order(nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (nodes[a].flow != nodes[b].flow) return nodes[a].flow > nodes[b].flow;
    return keys[a].first < keys[b].first;
  });
  std::vector<ModuleNode> sorted;
  sorted.reserve(nodes.size());
  for (std::size_t i : order) sorted.push_back(std::move(nodes[i]));
  nodes = std::move(sorted);
}

double subtree_cost(const ModuleNode& node) {
  if (node.children.empty()) {
    double sum = plogp(node.exit_flow), total = node.exit_flow;
    for (const auto& pf : node.physical_flows) {
      sum += plogp(pf.flow);
      total += pf.flow;
    }
    return codebook_cost(total, sum);
  }
  double sum = plogp(node.exit_flow), total = node.exit_flow;
  double below = 0.0;
  for (const auto& c : node.children) {
    sum += plogp(c.enter_flow);
    total += c.enter_flow;
    below += subtree_cost(c);
  }
  return codebook_cost(total, sum) + below;
}

double tree_cost(std::span<const ModuleNode> top) {
  double sum = 0.0, total = 0.0, below = 0.0;
  for (const auto& m : top) {
    sum += plogp(m.exit_flow);
    total += m.exit_flow;
    below += subtree_cost(m);
  }
  return codebook_cost(total, sum) + below;
}

void collect_states(const ModuleNode& node, std::vector<StateId>& out) {
  if (node.children.empty())
    out.insert(out.end(), node.states.begin(), node.states.end());
  else
    for (const auto& c : node.children) collect_states(c, out);
}

std::size_t tree_depth(std::span<const ModuleNode> nodes) {
  std::size_t d = 0;
  for (const auto& n : nodes) d = std::max(d, 1 + tree_depth(n.children));
  return d;
}


double total_cost(const FlowGraph& g, std::vector<ModuleNode>& tree) {
  std::vector<char> inside(g.size(), 0);
  for (auto& m : tree) fill_flows(g, m, inside);
  return tree_cost(tree);
}

// Agglomeration of top-level nodes into parents by the multilevel cost. Item
// subtrees keep their exit and enter flows whatever the grouping, so only the
// root codebook and the parent codebooks change; both follow from the
// item-to-item flow matrix. A single pairwise merge often costs more even when
// a larger group pays off, so the cheapest adjacent merge is always taken and
// the best grouping along the whole path is returned.
std::vector<ModuleNode> group_top_level(const FlowGraph& g, const std::vector<ModuleNode>& items) {
  constexpr std::size_t kMaxItems = 500;
  const std::size_t k = items.size();
  if (k > kMaxItems) return items;
  std::vector<std::uint32_t> item_of(g.size(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<StateId> states;
    collect_states(items[i], states);
    for (StateId s : states) item_of[s] = static_cast<std::uint32_t>(i);
  }
  std::vector<double> flow(k * k, 0.0);  // flow[a * k + b]: group a -> group b
  for (StateId u = 0; u < g.size(); ++u)
    for (const auto& arc : g.out[u])
      if (item_of[u] != item_of[arc.node]) flow[item_of[u] * k + item_of[arc.node]] += arc.flow;

  struct Group {
    bool alive = true;
    std::size_t size = 1;
    double exit = 0.0;
    double enter_sum = 0.0;    // sum of member enter flows
    double enter_plogp = 0.0;  // sum of plogp(member enter flows)
  };
  std::vector<Group> groups(k);
  std::vector<std::size_t> group_of(k);
  double root_sum = 0.0, root_plogp = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    group_of[i] = i;
    groups[i].exit = items[i].exit_flow;
    groups[i].enter_sum = items[i].enter_flow;
    groups[i].enter_plogp = plogp(items[i].enter_flow);
    root_sum += groups[i].exit;
    root_plogp += plogp(groups[i].exit);
  }
  auto parent_cost = [](std::size_t size, double exit, double enter_sum, double enter_plogp) {
    return size < 2 ? 0.0 : codebook_cost(exit + enter_sum, plogp(exit) + enter_plogp);
  };

  double offset = 0.0, best_offset = 0.0;
  std::vector<std::size_t> best_group_of = group_of;
  for (;;) {
    const double root = codebook_cost(root_sum, root_plogp);
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = kNone, bb = kNone;
    double best_exit = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      if (!groups[a].alive) continue;
      for (std::size_t b = a + 1; b < k; ++b) {
        if (!groups[b].alive) continue;
        const double between = flow[a * k + b] + flow[b * k + a];
        if (between <= 0.0) continue;
        const Group& x = groups[a];
        const Group& y = groups[b];
        const double exit = x.exit + y.exit - between;
        const double new_root = codebook_cost(root_sum - x.exit - y.exit + exit,
                                              root_plogp - plogp(x.exit) - plogp(y.exit) + plogp(exit));
        const double delta = new_root - root +
                             parent_cost(2, exit, x.enter_sum + y.enter_sum, x.enter_plogp + y.enter_plogp) -
                             parent_cost(x.size, x.exit, x.enter_sum, x.enter_plogp) -
                             parent_cost(y.size, y.exit, y.enter_sum, y.enter_plogp);
        if (delta < best) {
          best = delta;
          ba = a;
          bb = b;
          best_exit = exit;
        }
      }
    }
    if (ba == kNone) break;
    Group& x = groups[ba];
    Group& y = groups[bb];
    root_sum += best_exit - x.exit - y.exit;
    root_plogp += plogp(best_exit) - plogp(x.exit) - plogp(y.exit);
    x.exit = best_exit;
    x.size += y.size;
    x.enter_sum += y.enter_sum;
    x.enter_plogp += y.enter_plogp;
    y.alive = false;
    for (std::size_t c = 0; c < k; ++c) {
      flow[ba * k + c] += flow[bb * k + c];
      flow[c * k + ba] += flow[c * k + bb];
    }
    flow[ba * k + ba] = 0.0;
    for (auto& owner : group_of)
      if (owner == bb) owner = ba;
    offset += best;
    if (offset < best_offset - 1e-13) {
      best_offset = offset;
      best_group_of = group_of;
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < k; ++i) members[best_group_of[i]].push_back(i);
  std::vector<ModuleNode> out;
  for (const auto& [leader, list] : members) {
    if (list.size() == 1) {
      out.push_back(items[list[0]]);
      continue;
    }
    ModuleNode parent;
    for (std::size_t i : list) parent.children.push_back(items[i]);
    out.push_back(std::move(parent));
  }
  return out;
}

void split_recursive(const FlowGraph& g, std::vector<ModuleNode>& tree, ModuleNode& node, std::size_t depth,
                     const HierarchyOptions& options, std::uint64_t stream, double& current) {
  if (depth >= options.max_depth) return;
  if (!node.children.empty()) {
    for (std::size_t i = 0; i < node.children.size(); ++i)
      split_recursive(g, tree, node.children[i], depth + 1, options, mix_seed(stream, i), current);
    return;
  }
  if (node.states.size() < 2) return;
  FlowGraph sub = induced(g, node.states);
  OptimizeOptions opt = options.optimize;
  opt.seed = mix_seed(options.optimize.seed, stream);
  ModuleMap inner = optimize(sub, opt);
  if (inner.modules.size() < 2) return;

  ModuleNode saved = node;
  node.children.clear();
  for (const auto& m : inner.modules) {
    ModuleNode child;
    for (StateId local : m.states) child.states.push_back(node.states[local]);
    node.children.push_back(std::move(child));
  }
  node.states.clear();
  double candidate = total_cost(g, tree);
  if (candidate < current - options.optimize.min_improvement) {
    current = candidate;
    for (std::size_t i = 0; i < node.children.size(); ++i)
      split_recursive(g, tree, node.children[i], depth + 1, options, mix_seed(stream, 1000 + i), current);
  } else {
    node = std::move(saved);
    current = total_cost(g, tree);
  }
}

}  // namespace

FlowGraph make_flow_graph(const StateNetwork& net, std::span<const double> rates) {
  const std::size_t n = net.num_states();
  if (rates.size() != n) throw Error(ErrorKind::InvalidArgument, "rates must cover every state");
  FlowGraph g;
  g.node_flow.assign(rates.begin(), rates.end());
  g.physical_flow.resize(n);
  g.out.resize(n);
  g.in.resize(n);
  g.out_flow.assign(n, 0.0);
  for (StateId u = 0; u < n; ++u) {
    if (rates[u] > 0.0) g.physical_flow[u].emplace_back(net.physical(u), rates[u]);
    if (net.is_dangling(u) || rates[u] <= 0.0) continue;
    auto targets = net.targets(u);
    auto weights = net.weights(u);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i] == u) continue;
      double f = rates[u] * weights[i] / net.out_weight(u);
      g.out[u].push_back({targets[i], f});
      g.in[targets[i]].push_back({u, f});
      g.out_flow[u] += f;
    }
  }
  return g;
}

double map_equation(const FlowGraph& g, std::span<const ModuleId> assignment) {
  if (assignment.size() != g.size()) throw Error(ErrorKind::InvalidArgument, "assignment must cover every node");
  std::size_t k = 0;
  auto module = compact(assignment, &k);
  std::vector<double> exit(k, 0.0), flow(k, 0.0);
  std::vector<std::tuple<ModuleId, PhysId, double>> phys;
  for (std::size_t u = 0; u < g.size(); ++u) {
    flow[module[u]] += g.node_flow[u];
    for (const auto& [p, f] : g.physical_flow[u]) phys.emplace_back(module[u], p, f);
    for (const auto& arc : g.out[u])
      if (module[arc.node] != module[u]) exit[module[u]] += arc.flow;
  }
  std::stable_sort(phys.begin(), phys.end(), [](const auto& a, const auto& b) {
    return std::get<0>(a) != std::get<0>(b) ? std::get<0>(a) < std::get<0>(b) : std::get<1>(a) < std::get<1>(b);
  });
  double sum_phys = 0.0;
  for (std::size_t i = 0; i < phys.size();) {
    auto [m, p, f] = phys[i++];
    while (i < phys.size() && std::get<0>(phys[i]) == m && std::get<1>(phys[i]) == p) f += std::get<2>(phys[i++]);
    sum_phys += plogp(f);
  }
  double total_exit = 0.0, sum_exit = 0.0, sum_exit_flow = 0.0;
  for (std::size_t m = 0; m < k; ++m) {
    total_exit += exit[m];
    sum_exit += plogp(exit[m]);
    sum_exit_flow += plogp(exit[m] + flow[m]);
  }
  return plogp(total_exit) - 2.0 * sum_exit - sum_phys + sum_exit_flow;
}

double map_equation(const StateNetwork& net, std::span<const double> rates, std::span<const ModuleId> assignment) {
  return map_equation(make_flow_graph(net, rates), assignment);
}

ModuleMap make_module_map(const FlowGraph& graph, std::span<const ModuleId> assignment) {
  std::size_t k = 0;
  auto module = compact(assignment, &k);
  std::vector<ModuleNode> nodes(k);
  for (StateId u = 0; u < graph.size(); ++u) nodes[module[u]].states.push_back(u);
  std::vector<char> inside(graph.size(), 0);
  for (auto& n : nodes) fill_flows(graph, n, inside);
  sort_tree(graph, nodes);

  ModuleMap map;
  map.assignment.resize(graph.size());
  for (std::size_t m = 0; m < nodes.size(); ++m)
    for (StateId s : nodes[m].states) map.assignment[s] = static_cast<ModuleId>(m);
  map.modules = std::move(nodes);
  map.state_flow = graph.node_flow;
  map.codelength_bits = map_equation(graph, map.assignment);
  map.hierarchical_codelength_bits = tree_cost(map.modules);
  std::vector<ModuleId> one(graph.size(), 0);
  map.one_module_codelength_bits = map_equation(graph, one);
  map.depth = 1;
  return map;
}

double hierarchical_codelength(const FlowGraph& graph, std::span<const ModuleNode> top) {
  std::vector<ModuleNode> tree(top.begin(), top.end());
  return total_cost(graph, tree);
}

ModuleMap optimize(const FlowGraph& graph, const OptimizeOptions& options, const ParallelFor& parallel) {
  if (graph.size() == 0) throw Error(ErrorKind::InvalidArgument, "cannot optimize an empty network");
  const std::size_t trials = std::max<std::size_t>(1, options.trials);
  std::vector<TrialResult> results(trials);
  parallel(trials, [&](std::size_t t) { results[t] = run_trial(graph, options.seed + t, options, static_cast<Start>(t % 3)); });
  std::size_t best = 0;
  for (std::size_t t = 1; t < trials; ++t)
    if (results[t].codelength < results[best].codelength) best = t;

  std::vector<ModuleId> one(graph.size(), 0);
  std::vector<ModuleId> chosen = results[best].assignment;
  if (map_equation(graph, one) < results[best].codelength) chosen = one;
  ModuleMap map = make_module_map(graph, chosen);
  map.trials = trials;
  map.best_seed = options.seed + best;
  return map;
}

ModuleMap optimize(const StateNetwork& net, std::span<const double> rates, const OptimizeOptions& options,
                   const ParallelFor& parallel) {
  return optimize(make_flow_graph(net, rates), options, parallel);
}

ModuleMap hierarchical(const FlowGraph& graph, const ModuleMap& top, const HierarchyOptions& options) {
  ModuleMap map = top;
  std::vector<ModuleNode> tree = top.modules;
  double current = total_cost(graph, tree);

  // Super modules: group top-level nodes under new parents.
  while (tree.size() > 2 && tree_depth(tree) < options.max_depth) {
    auto grouped = group_top_level(graph, tree);
    if (grouped.size() == tree.size()) break;
    double candidate = total_cost(graph, grouped);
    if (!(candidate < current - options.optimize.min_improvement)) break;
    tree = std::move(grouped);
    current = candidate;
  }

  for (std::size_t i = 0; i < tree.size(); ++i)
    split_recursive(graph, tree, tree[i], 1, options, mix_seed(options.optimize.seed, 7 + i), current);

  current = total_cost(graph, tree);
  sort_tree(graph, tree);
  map.modules = std::move(tree);
  for (std::size_t m = 0; m < map.modules.size(); ++m) {
    std::vector<StateId> states;
    collect_states(map.modules[m], states);
    for (StateId s : states) map.assignment[s] = static_cast<ModuleId>(m);
  }
  map.codelength_bits = map_equation(graph, map.assignment);
  map.hierarchical_codelength_bits = current;
  map.depth = tree_depth(map.modules);
  return map;
}

ModuleMap hierarchical(const StateNetwork& net, std::span<const double> rates, const ModuleMap& top,
                       const HierarchyOptions& options) {
  return hierarchical(make_flow_graph(net, rates), top, options);
}

namespace {

void write_subtree(std::ostream& out, const StateNetwork& net, const ModuleNode& node, std::string prefix,
                   std::span<const double> flows) {
  if (node.children.empty()) {
    for (std::size_t i = 0; i < node.states.size(); ++i) {
      StateId s = node.states[i];
      PhysId p = net.physical(s);
      out << prefix << (i + 1) << ' ' << format_double(flows[s], 12) << " \"" << net.physical_names()[p] << "\" " << s
          << ' ' << p << '\n';
    }
    return;
  }
  for (std::size_t i = 0; i < node.children.size(); ++i)
    write_subtree(out, net, node.children[i], prefix + std::to_string(i + 1) + ":", flows);
}

}  // namespace

void write_tree(std::ostream& out, const StateNetwork& net, const ModuleMap& map) {
  if (map.state_flow.size() != net.num_states())
    throw Error(ErrorKind::InvalidArgument, "map does not belong to this network");
  out << "# flowlump tree\n";
  out << "# codelength " << format_double(map.codelength_bits) << " bits\n";
  out << "# hierarchical_codelength " << format_double(map.hierarchical_codelength_bits) << " bits\n";
  out << "# path flow name stateId physicalId\n";
  for (std::size_t i = 0; i < map.modules.size(); ++i)
    write_subtree(out, net, map.modules[i], std::to_string(i + 1) + ":", map.state_flow);
}

TreeFile read_tree(std::istream& in) {
  TreeFile tree;
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::Format, "tree line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    auto tokens = tokenize(raw);
    if (tokens.empty()) continue;
    if (tokens[0] == "#") {
      if (tokens.size() >= 3 && tokens[1] == "codelength" && !parse_double(tokens[2], tree.codelength_bits))
        fail("bad codelength");
      continue;
    }
    if (tokens[0][0] == '#') continue;
    if (tokens.size() != 5) fail("expected path flow \"name\" stateId physicalId");
    TreeEntry e;
    std::size_t start = 0;
    const std::string& path = tokens[0];
    while (start <= path.size()) {
      std::size_t colon = path.find(':', start);
      if (colon == std::string::npos) colon = path.size();
      std::string part = path.substr(start, colon - start);
      if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) fail("bad path '" + path + "'");
      e.path.push_back(static_cast<std::uint32_t>(std::stoul(part)));
      start = colon + 1;
    }
    if (e.path.size() < 2) fail("path needs a module and a rank");
    if (!parse_double(tokens[1], e.flow)) fail("bad flow");
    e.name = tokens[2];
    try {
      e.state = static_cast<StateId>(std::stoul(tokens[3]));
      e.physical = static_cast<PhysId>(std::stoul(tokens[4]));
    } catch (const std::logic_error&) {
      fail("bad ids");
    }
    tree.entries.push_back(std::move(e));
  }
  return tree;
}

std::vector<ModuleId> tree_assignment(const TreeFile& tree, std::size_t num_states, std::size_t level) {
  if (level == 0) throw Error(ErrorKind::InvalidArgument, "tree level starts at 1");
  std::vector<ModuleId> out(num_states, kNone);
  std::map<std::vector<std::uint32_t>, ModuleId> ids;
  for (const auto& e : tree.entries) {
    if (e.state >= num_states) throw Error(ErrorKind::InvalidArgument, "tree state id out of range");
    std::size_t depth = std::min(level, e.path.size() - 1);
    std::vector<std::uint32_t> prefix(e.path.begin(), e.path.begin() + depth);
    auto it = ids.emplace(std::move(prefix), static_cast<ModuleId>(ids.size())).first;
    out[e.state] = it->second;
  }
  for (auto& m : out)
    if (m == kNone) throw Error(ErrorKind::InvalidArgument, "tree does not cover every state");
  return out;
}

ModuleMap module_map_from_tree(const FlowGraph& graph, const TreeFile& tree) {
  tree_assignment(tree, graph.size(), 1);  // throws unless every state is listed
  std::vector<ModuleNode> top;
  for (const auto& e : tree.entries) {
    std::vector<ModuleNode>* level = &top;
    ModuleNode* node = nullptr;
    for (std::size_t d = 0; d + 1 < e.path.size(); ++d) {
      if (e.path[d] == 0) throw Error(ErrorKind::Format, "tree paths are 1-based");
      const std::size_t index = e.path[d] - 1;
      if (level->size() <= index) level->resize(index + 1);
      node = &(*level)[index];
      level = &node->children;
    }
    if (!node->children.empty()) throw Error(ErrorKind::Format, "tree mixes states and submodules in one module");
    node->states.push_back(e.state);
  }
  std::vector<char> inside(graph.size(), 0);
  for (auto& m : top) fill_flows(graph, m, inside);
  sort_tree(graph, top);

  ModuleMap map;
  map.assignment.assign(graph.size(), 0);
  for (std::size_t m = 0; m < top.size(); ++m) {
    std::vector<StateId> states;
    collect_states(top[m], states);
    for (StateId s : states) map.assignment[s] = static_cast<ModuleId>(m);
  }
  map.modules = std::move(top);
  map.state_flow = graph.node_flow;
  map.codelength_bits = map_equation(graph, map.assignment);
  map.hierarchical_codelength_bits = tree_cost(map.modules);
  std::vector<ModuleId> one(graph.size(), 0);
  map.one_module_codelength_bits = map_equation(graph, one);
  map.depth = tree_depth(map.modules);
  return map;
}

}  // namespace flowlump
