#include "flowlump/lumping.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <string>

namespace flowlump {

namespace {

// Un-normalized out-weight per physical target, sorted by target.
struct Block {
  std::vector<std::pair<PhysId, double>> counts;
  double weight = 0.0;
  bool alive = true;
  std::uint32_t version = 0;
};

Block make_block(const StateNetwork& net, StateId u) {
  Block b;
  auto targets = net.targets(u);
  auto weights = net.weights(u);
  for (std::size_t i = 0; i < targets.size(); ++i) b.counts.emplace_back(net.physical(targets[i]), weights[i]);
  std::stable_sort(b.counts.begin(), b.counts.end(),
                   [](const auto& x, const auto& y) { return x.first < y.first; });
  std::size_t out = 0;
  for (std::size_t i = 0; i < b.counts.size(); ++i) {
    if (out > 0 && b.counts[out - 1].first == b.counts[i].first)
      b.counts[out - 1].second += b.counts[i].second;
    else
      b.counts[out++] = b.counts[i];
  }
  b.counts.resize(out);
  b.weight = net.out_weight(u);
  return b;
}

std::vector<std::pair<PhysId, double>> merge_counts(const std::vector<std::pair<PhysId, double>>& a,
                                                    const std::vector<std::pair<PhysId, double>>& b) {
  std::vector<std::pair<PhysId, double>> out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      out.push_back(a[i++]);
    } else if (i == a.size() || b[j].first < a[i].first) {
      out.push_back(b[j++]);
    } else {
      out.emplace_back(a[i].first, a[i].second + b[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

// w_a D(P_a || P_ab) + w_b D(P_b || P_ab), in bits times weight.
double weighted_js(const Block& a, const Block& b) {
  if (a.weight <= 0.0 || b.weight <= 0.0) return 0.0;
  const double wab = a.weight + b.weight;
  double sum = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.counts.size() || j < b.counts.size()) {
    double ca = 0.0, cb = 0.0;
    if (j == b.counts.size() || (i < a.counts.size() && a.counts[i].first < b.counts[j].first)) {
      ca = a.counts[i++].second;
    } else if (i == a.counts.size() || b.counts[j].first < a.counts[i].first) {
      cb = b.counts[j++].second;
    } else {
      ca = a.counts[i++].second;
      cb = b.counts[j++].second;
    }
    const double mix = (ca + cb) / wab;
    if (ca > 0.0) sum += ca * std::log2((ca / a.weight) / mix);
    if (cb > 0.0) sum += cb * std::log2((cb / b.weight) / mix);
  }
  return std::max(0.0, sum);
}

struct Candidate {
  double delta;
  StateId lo, hi;  // block representatives, lo < hi
  std::uint32_t ver_lo, ver_hi;
};

struct CandidateOrder {
  // priority_queue pops the largest, so "larger" means worse.
  bool operator()(const Candidate& x, const Candidate& y) const {
    if (x.delta != y.delta) return x.delta > y.delta;
    if (x.lo != y.lo) return x.lo > y.lo;
    return x.hi > y.hi;
  }
};

double jaccard(const Block& a, const Block& b) {
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.counts.size() && j < b.counts.size()) {
    if (a.counts[i].first < b.counts[j].first) ++i;
    else if (b.counts[j].first < a.counts[i].first) ++j;
    else { ++inter; ++i; ++j; }
  }
  std::size_t uni = a.counts.size() + b.counts.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

class DendrogramBuilder {
 public:
  DendrogramBuilder(const StateNetwork& net, std::span<const StateId> states, const LumpOptions& options)
      : options_(options), total_(net.total_weight()) {
    for (StateId s : states) {
      ids_.push_back(s);
      blocks_.push_back(make_block(net, s));
    }
    // Local slot indices follow ascending state id, so comparing slots
    // compares representatives.
    std::vector<std::size_t> order(ids_.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return ids_[x] < ids_[y]; });
    std::vector<StateId> ids;
    std::vector<Block> blocks;
    for (std::size_t o : order) {
      ids.push_back(ids_[o]);
      blocks.push_back(std::move(blocks_[o]));
    }
    ids_ = std::move(ids);
    blocks_ = std::move(blocks);
    neighbors_.resize(ids_.size());
    parent_.resize(ids_.size());
    std::iota(parent_.begin(), parent_.end(), 0);
    alive_ = ids_.size();
  }

  std::vector<Merge> run() {
    std::vector<Merge> merges;
    if (ids_.size() <= 1) return merges;
    merges.reserve(ids_.size() - 1);

    // Dangling states carry no out-weight; fold them together first.
    std::size_t first_dangling = kNone;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (blocks_[i].weight > 0.0) continue;
      if (first_dangling == kNone) {
        first_dangling = i;
      } else {
        blocks_[i].alive = false;
        parent_[i] = first_dangling;
        --alive_;
        merges.push_back({ids_[first_dangling], ids_[i], 0.0});
      }
    }

    exact_ = alive_ <= options_.exact_limit;
    seed_candidates();
    while (alive_ > 1) {
      if (heap_.empty()) {
        seed_candidates();
        continue;
      }
      Candidate c = heap_.top();
      heap_.pop();
      if (!blocks_[c.lo].alive || !blocks_[c.hi].alive) continue;
      if (blocks_[c.lo].version != c.ver_lo || blocks_[c.hi].version != c.ver_hi) continue;
      merges.push_back({ids_[c.lo], ids_[c.hi], c.delta});
      absorb(c.lo, c.hi);
      if (!exact_ && alive_ <= options_.exact_limit) {
        exact_ = true;
        heap_ = {};
        seed_candidates();
      }
    }
    return merges;
  }

 private:
  double delta(std::size_t a, std::size_t b) const { return weighted_js(blocks_[a], blocks_[b]) / total_; }

  void push(std::size_t a, std::size_t b) {
    if (a == b) return;
    if (a > b) std::swap(a, b);
    heap_.push({delta(a, b), static_cast<StateId>(a), static_cast<StateId>(b), blocks_[a].version,
                blocks_[b].version});
  }

  std::vector<std::size_t> alive_slots() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].alive) out.push_back(i);
    return out;
  }

  void seed_candidates() {
    auto slots = alive_slots();
    if (exact_ || slots.size() <= options_.exact_limit) {
      for (std::size_t x = 0; x < slots.size(); ++x)
        for (std::size_t y = x + 1; y < slots.size(); ++y) push(slots[x], slots[y]);
      return;
    }
    // Prune to the nearest neighbours by out-link Jaccard similarity, found
    // through an inverted index over physical targets.
    std::unordered_map<PhysId, std::vector<std::size_t>> by_target;
    for (std::size_t s : slots)
      for (const auto& [phys, w] : blocks_[s].counts) by_target[phys].push_back(s);
    std::vector<std::uint32_t> shared(blocks_.size(), 0);
    std::vector<std::size_t> touched;
    const std::size_t keep = options_.candidate_neighbors;
    for (std::size_t s : slots) {
      touched.clear();
      for (const auto& [phys, w] : blocks_[s].counts) {
        for (std::size_t o : by_target[phys]) {
          if (o == s) continue;
          if (shared[o]++ == 0) touched.push_back(o);
        }
      }
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t o : touched) {
        scored.emplace_back(jaccard(blocks_[s], blocks_[o]), o);
        shared[o] = 0;
      }
      std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
      });
      if (scored.size() > keep) scored.resize(keep);
      // Too few overlapping blocks: pad with the lowest ids so the candidate
      // graph cannot strand a block.
      for (std::size_t o : slots) {
        if (scored.size() >= keep) break;
        if (o == s) continue;
        if (std::none_of(scored.begin(), scored.end(), [o](const auto& p) { return p.second == o; }))
          scored.emplace_back(0.0, o);
      }
      for (const auto& [score, o] : scored) {
        neighbors_[s].push_back(o);
        neighbors_[o].push_back(s);
      }
    }
    for (std::size_t s : slots) {
      auto& n = neighbors_[s];
      std::sort(n.begin(), n.end());
      n.erase(std::unique(n.begin(), n.end()), n.end());
      for (std::size_t o : n)
        if (s < o) push(s, o);
    }
  }

  std::size_t find(std::size_t s) {
    while (parent_[s] != s) s = parent_[s] = parent_[parent_[s]];
    return s;
  }

  void absorb(std::size_t keep, std::size_t gone) {
    Block& a = blocks_[keep];
    Block& b = blocks_[gone];
    a.counts = merge_counts(a.counts, b.counts);
    a.weight += b.weight;
    ++a.version;
    b.alive = false;
    b.counts.clear();
    b.counts.shrink_to_fit();
    --alive_;
    parent_[gone] = keep;

    if (exact_) {
      for (std::size_t o = 0; o < blocks_.size(); ++o)
        if (o != keep && blocks_[o].alive) push(keep, o);
      return;
    }
    std::vector<std::size_t> merged;
    for (std::size_t o : neighbors_[keep]) merged.push_back(find(o));
    for (std::size_t o : neighbors_[gone]) merged.push_back(find(o));
    neighbors_[gone].clear();
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    merged.erase(std::remove(merged.begin(), merged.end(), keep), merged.end());
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t o : merged) scored.emplace_back(delta(keep, o), o);
    std::sort(scored.begin(), scored.end());
    if (scored.size() > 2 * options_.candidate_neighbors) scored.resize(2 * options_.candidate_neighbors);
    neighbors_[keep].clear();
    for (const auto& [d, o] : scored) {
      neighbors_[keep].push_back(o);
      neighbors_[o].push_back(keep);
      StateId lo = static_cast<StateId>(std::min(keep, o));
      StateId hi = static_cast<StateId>(std::max(keep, o));
      heap_.push({d, lo, hi, blocks_[lo].version, blocks_[hi].version});
    }
  }

  LumpOptions options_;
  double total_;
  std::vector<StateId> ids_;
  std::vector<Block> blocks_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::vector<std::size_t> parent_;
  std::size_t alive_ = 0;
  bool exact_ = true;
  std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> heap_;
};

}  // namespace

double kl_divergence(const Distribution<PhysId>& p, const Distribution<PhysId>& q) {
  double sum = 0.0;
  std::size_t j = 0;
  for (const auto& [key, px] : p.entries) {
    if (px <= 0.0) continue;
    while (j < q.entries.size() && q.entries[j].first < key) ++j;
    if (j == q.entries.size() || q.entries[j].first != key || q.entries[j].second <= 0.0)
      throw Error(ErrorKind::InvalidArgument, "kl_divergence: support of p not contained in q");
    sum += px * std::log2(px / q.entries[j].second);
  }
  return std::max(0.0, sum);
}

double lump_delta(const StateNetwork& net, StateId u, StateId v) {
  if (u == v) throw Error(ErrorKind::InvalidArgument, "lump_delta needs two distinct states");
  if (net.physical(u) != net.physical(v))
    throw Error(ErrorKind::InvalidArgument, "lump_delta: states belong to different physical nodes");
  if (!(net.total_weight() > 0.0)) return 0.0;
  return weighted_js(make_block(net, u), make_block(net, v)) / net.total_weight();
}

double entropy_rate(const StateNetwork& net) {
  const double total = net.total_weight();
  if (!(total > 0.0)) return 0.0;
  double rate = 0.0;
  for (StateId u = 0; u < net.num_states(); ++u) {
    if (net.is_dangling(u)) continue;
    auto d = physical_projection(net, u);
    double h = 0.0;
    for (const auto& [phys, p] : d.entries) h -= plogp(p);
    rate += net.out_weight(u) / total * h;
  }
  return rate;
}

LumpDendrogram build_dendrogram(const StateNetwork& net, PhysId physical, std::span<const StateId> states,
                                const LumpOptions& options) {
  if (states.empty()) throw Error(ErrorKind::InvalidArgument, "build_dendrogram needs at least one state");
  for (StateId s : states)
    if (net.physical(s) != physical)
      throw Error(ErrorKind::InvalidArgument, "build_dendrogram: state of another physical node");
  LumpDendrogram d;
  d.physical = physical;
  d.states.assign(states.begin(), states.end());
  std::sort(d.states.begin(), d.states.end());
  d.merges = DendrogramBuilder(net, d.states, options).run();
  return d;
}

std::vector<LumpDendrogram> build_dendrograms(const StateNetwork& net, const LumpOptions& options,
                                             const ParallelFor& parallel) {
  auto groups = net.states_by_physical();
  std::vector<PhysId> occupied;
  for (PhysId p = 0; p < groups.size(); ++p)
    if (!groups[p].empty()) occupied.push_back(p);
  std::vector<LumpDendrogram> out(occupied.size());
  parallel(occupied.size(), [&](std::size_t i) {
    out[i] = build_dendrogram(net, occupied[i], groups[occupied[i]], options);
  });
  return out;
}

std::vector<PhysId> unlumping_sequence(std::span<const LumpDendrogram> dendrograms) {
  struct Entry {
    double delta;
    PhysId physical;
    std::size_t index;  // dendrogram slot
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.delta != b.delta) return a.delta < b.delta;
    return a.physical > b.physical;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  std::vector<std::size_t> applied(dendrograms.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < dendrograms.size(); ++i) {
    applied[i] = dendrograms[i].merges.size();
    total += applied[i];
    if (applied[i] > 0) heap.push({dendrograms[i].merges.back().delta_bits, dendrograms[i].physical, i});
  }
  std::vector<PhysId> sequence;
  sequence.reserve(total);
  while (!heap.empty()) {
    Entry e = heap.top();
    heap.pop();
    sequence.push_back(e.physical);
    std::size_t left = --applied[e.index];
    if (left > 0) heap.push({dendrograms[e.index].merges[left - 1].delta_bits, e.physical, e.index});
  }
  return sequence;
}

std::vector<StateId> expand_partition(std::span<const LumpDendrogram> dendrograms, std::size_t num_states,
                                      std::size_t r) {
  std::size_t total = 0;
  for (const auto& d : dendrograms) total += d.states.size();
  if (total != num_states)
    throw Error(ErrorKind::InvalidArgument, "dendrograms cover " + std::to_string(total) + " states, network has " +
                                                std::to_string(num_states));
  const std::size_t n = dendrograms.size();
  if (r < n || r > total)
    throw Error(ErrorKind::OutOfRange, "target state count " + std::to_string(r) + " outside [" + std::to_string(n) +
                                           ", " + std::to_string(total) + "]");

  std::unordered_map<PhysId, std::size_t> slot;
  for (std::size_t i = 0; i < n; ++i) slot[dendrograms[i].physical] = i;
  std::vector<std::size_t> applied(n);
  for (std::size_t i = 0; i < n; ++i) applied[i] = dendrograms[i].merges.size();
  auto sequence = unlumping_sequence(dendrograms);
  for (std::size_t i = 0; i < r - n; ++i) --applied[slot.at(sequence[i])];

  std::vector<StateId> parent(num_states);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](StateId s) {
    while (parent[s] != s) s = parent[s] = parent[parent[s]];
    return s;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& merges = dendrograms[i].merges;
    for (std::size_t j = 0; j < applied[i]; ++j) {
      StateId a = find(merges[j].left), b = find(merges[j].right);
      if (a == b) throw Error(ErrorKind::Format, "dendrogram merges a block with itself");
      if (a < b) parent[b] = a; else parent[a] = b;
    }
  }
  std::vector<StateId> partition(num_states, kNone);
  std::vector<StateId> block_id(num_states, kNone);
  StateId next = 0;
  for (StateId s = 0; s < num_states; ++s) {
    StateId root = find(s);
    if (block_id[root] == kNone) block_id[root] = next++;
    partition[s] = block_id[root];
  }
  return partition;
}

StateNetwork lumped_network(std::span<const StateId> partition, const StateNetwork& original) {
  if (partition.size() != original.num_states())
    throw Error(ErrorKind::InvalidArgument, "partition must cover every original state");
  std::size_t r = 0;
  for (StateId b : partition) r = std::max<std::size_t>(r, static_cast<std::size_t>(b) + 1);
  std::vector<StateNode> states(r);
  std::vector<char> seen(r, 0);
  for (StateId u = 0; u < partition.size(); ++u) {
    StateId b = partition[u];
    auto& s = states[b];
    if (!seen[b]) {
      seen[b] = 1;
      s.id = b;
      s.physical = original.physical(u);
      s.context = original.state(u).context;
    } else if (s.physical != original.physical(u)) {
      throw Error(ErrorKind::InvalidArgument, "lumped state " + std::to_string(b) + " spans physical nodes");
    }
    s.members.push_back(u);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw Error(ErrorKind::InvalidArgument, "partition block ids must be dense");
  std::vector<LinkTriple> links;
  links.reserve(original.num_links());
  for (StateId u = 0; u < original.num_states(); ++u) {
    auto targets = original.targets(u);
    auto weights = original.weights(u);
    for (std::size_t i = 0; i < targets.size(); ++i) links.push_back({partition[u], partition[targets[i]], weights[i]});
  }
  return StateNetwork(original.physical_names(), std::move(states), std::move(links), original.order());
}

SparseModel expand_model(std::span<const LumpDendrogram> dendrograms, std::shared_ptr<const StateNetwork> original,
                         std::size_t r) {
  SparseModel model;
  model.partition = expand_partition(dendrograms, original->num_states(), r);
  model.r = r;
  model.network = lumped_network(model.partition, *original);
  model.entropy_rate_bits = entropy_rate(model.network);
  model.original = std::move(original);
  return model;
}

void write_dendrograms(std::ostream& out, std::span<const LumpDendrogram> dendrograms) {
  std::size_t total = 0;
  for (const auto& d : dendrograms) total += d.states.size();
  out << "# flowlump dendrograms\n";
  out << "*Dendrograms " << dendrograms.size() << " states " << total << '\n';
  for (const auto& d : dendrograms) {
    out << "physical " << d.physical << " states " << d.states.size();
    for (StateId s : d.states) out << ' ' << s;
    out << '\n';
    for (const auto& m : d.merges) out << "merge " << m.left << ' ' << m.right << ' ' << format_double(m.delta_bits) << '\n';
  }
}

std::vector<LumpDendrogram> read_dendrograms(std::istream& in) {
  std::vector<LumpDendrogram> out;
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::Format, "dendrogram line " + std::to_string(line_no) + ": " + what);
  };
  auto to_u32 = [&](const std::string& tok) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::logic_error&) {
      fail("bad integer '" + tok + "'");
    }
    if (used != tok.size()) fail("bad integer '" + tok + "'");
    return static_cast<std::uint32_t>(v);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    auto tokens = tokenize(raw);
    if (tokens.empty() || tokens[0][0] == '#' || tokens[0][0] == '*') continue;
    if (tokens[0] == "physical") {
      if (tokens.size() < 4 || tokens[2] != "states") fail("expected physical <id> states <k> ids...");
      LumpDendrogram d;
      d.physical = to_u32(tokens[1]);
      std::size_t k = to_u32(tokens[3]);
      if (tokens.size() != 4 + k) fail("state count mismatch");
      for (std::size_t i = 0; i < k; ++i) d.states.push_back(to_u32(tokens[4 + i]));
      out.push_back(std::move(d));
    } else if (tokens[0] == "merge") {
      if (out.empty()) fail("merge before physical");
      if (tokens.size() != 4) fail("expected merge left right delta");
      double delta = 0.0;
      if (!parse_double(tokens[3], delta) || delta < 0.0) fail("bad delta '" + tokens[3] + "'");
      out.back().merges.push_back({to_u32(tokens[1]), to_u32(tokens[2]), delta});
    } else {
      fail("unexpected '" + tokens[0] + "'");
    }
  }
  for (const auto& d : out)
    if (d.merges.size() + 1 != d.states.size())
      throw Error(ErrorKind::Format, "physical " + std::to_string(d.physical) + " needs k-1 merges");
  return out;
}

}  // namespace flowlump
