#include "flowlump/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace flowlump {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

}  // namespace

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    if (line[i] == '"') {
      std::size_t close = line.find('"', i + 1);
      if (close == std::string_view::npos) close = line.size();
      tokens.emplace_back(line.substr(i + 1, close - i - 1));
      i = close + 1;
    } else {
      std::size_t start = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      tokens.emplace_back(line.substr(start, i - start));
    }
  }
  return tokens;
}

double PathCorpus::total_weight() const {
  double total = 0.0;
  for (const auto& p : paths) total += p.weight;
  return total;
}

PathCorpus PathCorpus::subset(std::span<const std::size_t> indices) const {
  PathCorpus out;
  out.names = names;
  out.paths.reserve(indices.size());
  for (std::size_t i : indices) out.paths.push_back(paths.at(i));
  return out;
}

std::optional<PhysId> PathCorpus::find(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<PhysId>(i);
  return std::nullopt;
}

ParseResult parse_paths(std::istream& in, const ParseOptions& options) {
  ParseResult result;
  auto& corpus = result.corpus;
  std::unordered_map<std::string, PhysId> ids;
  bool declared_vertices = false;
  bool grouped = options.grouped;
  enum class Block { Paths, Vertices } block = Block::Paths;

  auto reject = [&](std::size_t line, std::string message) {
    result.rejected.push_back({line, std::move(message)});
  };

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;

    if (line.front() == '*') {
      auto tokens = tokenize(line);
      std::string head = lower(tokens[0]);
      if (head == "*vertices") {
        block = Block::Vertices;
        declared_vertices = true;
      } else if (head == "*paths") {
        block = Block::Paths;
        if (tokens.size() > 1 && lower(tokens[1]) == "grouped") grouped = true;
      } else {
        reject(line_no, "unknown header " + tokens[0]);
      }
      continue;
    }

    auto tokens = tokenize(line);
    if (block == Block::Vertices) {
      const std::string& key = tokens[0];
      if (ids.count(key)) {
        reject(line_no, "duplicate vertex id " + key);
        continue;
      }
      ids.emplace(key, static_cast<PhysId>(corpus.names.size()));
      corpus.names.push_back(tokens.size() > 1 ? tokens[1] : key);
      continue;
    }

    std::size_t first = grouped ? 1 : 0;
    if (tokens.size() < first + 3) {
      reject(line_no, "path shorter than 2 nodes");
      continue;
    }
    double weight = 0.0;
    if (!parse_double(tokens.back(), weight)) {
      reject(line_no, "non-numeric weight '" + tokens.back() + "'");
      continue;
    }
    if (weight <= 0.0) {
      reject(line_no, "weight must be positive");
      continue;
    }
    PathRecord record;
    record.weight = weight;
    if (grouped) record.group_key = tokens[0];
    bool ok = true;
    for (std::size_t t = first; t + 1 < tokens.size(); ++t) {
      auto it = ids.find(tokens[t]);
      if (it == ids.end()) {
        if (declared_vertices) {
          reject(line_no, "unknown vertex '" + tokens[t] + "'");
          ok = false;
          break;
        }
        it = ids.emplace(tokens[t], static_cast<PhysId>(corpus.names.size())).first;
        corpus.names.push_back(tokens[t]);
      }
      record.nodes.push_back(it->second);
    }
    if (ok) corpus.paths.push_back(std::move(record));
  }

  if (corpus.paths.empty()) {
    std::string message = "no usable paths";
    if (!result.rejected.empty()) {
      message += " (" + std::to_string(result.rejected.size()) + " rejected lines; first at line " +
                 std::to_string(result.rejected.front().line) + ": " +
                 result.rejected.front().message + ")";
    }
    throw Error(ErrorKind::EmptyCorpus, message);
  }
  return result;
}

ParseResult parse_paths_file(const std::string& path, const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return parse_paths(in, options);
}

void write_paths(std::ostream& out, const PathCorpus& corpus) {
  bool grouped = std::any_of(corpus.paths.begin(), corpus.paths.end(),
                             [](const PathRecord& p) { return !p.group_key.empty(); });
  out << "*Vertices " << corpus.names.size() << '\n';
  for (std::size_t i = 0; i < corpus.names.size(); ++i)
    out << i << ' ' << quote(corpus.names[i]) << '\n';
  out << (grouped ? "*Paths grouped\n" : "*Paths\n");
  for (const auto& p : corpus.paths) {
    if (grouped) out << (p.group_key.empty() ? std::string("-") : p.group_key) << ' ';
    for (PhysId n : p.nodes) out << n << ' ';
    out << format_double(p.weight) << '\n';
  }
}

// ---------------------------------------------------------------------------

std::size_t StateNetwork::KeyHash::operator()(const std::vector<PhysId>& key) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (PhysId x : key) {
    h ^= x;
    h *= 0x100000001b3ULL;
    h ^= h >> 29;
  }
  return static_cast<std::size_t>(h);
}

StateNetwork::StateNetwork(std::vector<std::string> physical_names, std::vector<StateNode> states,
                           std::vector<LinkTriple> links, int order)
    : order_(order), names_(std::move(physical_names)), states_(std::move(states)) {
  const std::size_t n = states_.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = states_[i];
    if (s.id != i) throw Error(ErrorKind::InvalidArgument, "state ids must be dense and ordered");
    if (s.physical >= names_.size())
      throw Error(ErrorKind::InvalidArgument, "state " + std::to_string(i) + " has unknown physical node");
    if (s.members.empty()) s.members.push_back(s.id);
  }
  for (const auto& l : links) {
    if (l.source >= n || l.target >= n)
      throw Error(ErrorKind::InvalidArgument, "link endpoint out of range");
    if (!(l.weight >= 0.0) || !std::isfinite(l.weight))
      throw Error(ErrorKind::InvalidArgument, "link weights must be finite and nonnegative");
  }
  std::stable_sort(links.begin(), links.end(), [](const LinkTriple& a, const LinkTriple& b) {
    return a.source != b.source ? a.source < b.source : a.target < b.target;
  });

  offsets_.assign(n + 1, 0);
  out_weight_.assign(n, 0.0);
  targets_.reserve(links.size());
  weights_.reserve(links.size());
  std::size_t i = 0;
  for (StateId u = 0; u < n; ++u) {
    while (i < links.size() && links[i].source == u) {
      StateId v = links[i].target;
      double w = 0.0;
      while (i < links.size() && links[i].source == u && links[i].target == v) w += links[i++].weight;
      if (w > 0.0) {
        targets_.push_back(v);
        weights_.push_back(w);
        out_weight_[u] += w;
      }
    }
    offsets_[u + 1] = targets_.size();
    total_weight_ += out_weight_[u];
  }

  index_.reserve(n);
  for (const auto& s : states_) {
    std::vector<PhysId> key = s.context;
    key.push_back(s.physical);
    index_.emplace(std::move(key), s.id);
  }
}

std::span<const StateId> StateNetwork::targets(StateId u) const {
  return {targets_.data() + offsets_[u], offsets_[u + 1] - offsets_[u]};
}

std::span<const double> StateNetwork::weights(StateId u) const {
  return {weights_.data() + offsets_[u], offsets_[u + 1] - offsets_[u]};
}

std::optional<StateId> StateNetwork::find_state(std::span<const PhysId> context, PhysId physical) const {
  std::vector<PhysId> key(context.begin(), context.end());
  key.push_back(physical);
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::vector<StateId>> StateNetwork::states_by_physical() const {
  std::vector<std::vector<StateId>> groups(names_.size());
  for (const auto& s : states_) groups[s.physical].push_back(s.id);
  return groups;
}

std::size_t StateNetwork::num_occupied_physical() const {
  std::vector<char> seen(names_.size(), 0);
  for (const auto& s : states_) seen[s.physical] = 1;
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
}

StateNetwork build_state_network(const PathCorpus& corpus, int order, BuildStats* stats) {
  if (order < 1) throw Error(ErrorKind::InvalidArgument, "order must be >= 1");
  const std::size_t m = static_cast<std::size_t>(order);
  BuildStats local;

  // A state is the last m nodes before a step: context (m-1) then physical.
  struct VecHash {
    std::size_t operator()(const std::vector<PhysId>& v) const noexcept {
      std::uint64_t h = 1469598103934665603ULL;
      for (PhysId x : v) h = (h ^ x) * 1099511628211ULL;
      return static_cast<std::size_t>(h ^ (h >> 32));
    }
  };
  std::unordered_set<std::vector<PhysId>, VecHash> keys;
  for (const auto& p : corpus.paths) {
    if (p.nodes.size() < m + 1) {
      ++local.skipped_paths;
      continue;
    }
    for (std::size_t t = m; t < p.nodes.size(); ++t) {
      keys.emplace(p.nodes.begin() + (t - m), p.nodes.begin() + t);
      keys.emplace(p.nodes.begin() + (t - m + 1), p.nodes.begin() + t + 1);
    }
  }
  if (keys.empty()) throw Error(ErrorKind::NoWindows, "no path has a window of length order+1");

  std::vector<std::vector<PhysId>> sorted(keys.begin(), keys.end());
  keys.clear();
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.back() != b.back()) return a.back() < b.back();
    return std::lexicographical_compare(a.begin(), a.end() - 1, b.begin(), b.end() - 1);
  });
  std::unordered_map<std::vector<PhysId>, StateId, VecHash> id_of;
  id_of.reserve(sorted.size());
  std::vector<StateNode> states;
  states.reserve(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    StateNode s;
    s.id = static_cast<StateId>(i);
    s.physical = sorted[i].back();
    s.context.assign(sorted[i].begin(), sorted[i].end() - 1);
    states.push_back(std::move(s));
    id_of.emplace(std::move(sorted[i]), static_cast<StateId>(i));
  }

  std::vector<LinkTriple> links;
  std::vector<PhysId> key(m);
  for (const auto& p : corpus.paths) {
    if (p.nodes.size() < m + 1) continue;
    for (std::size_t t = m; t < p.nodes.size(); ++t) {
      key.assign(p.nodes.begin() + (t - m), p.nodes.begin() + t);
      StateId u = id_of.at(key);
      key.assign(p.nodes.begin() + (t - m + 1), p.nodes.begin() + t + 1);
      StateId v = id_of.at(key);
      links.push_back({u, v, p.weight});
      ++local.windows;
      local.window_weight += p.weight;
    }
  }
  if (stats) *stats = local;
  return StateNetwork(corpus.names, std::move(states), std::move(links), order);
}

Distribution<StateId> transition_probabilities(const StateNetwork& net, StateId u) {
  Distribution<StateId> d;
  double w = net.out_weight(u);
  if (w <= 0.0) {
    d.dangling = true;
    return d;
  }
  auto targets = net.targets(u);
  auto weights = net.weights(u);
  d.entries.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) d.entries.emplace_back(targets[i], weights[i] / w);
  return d;
}

Distribution<PhysId> physical_projection(const StateNetwork& net, StateId u) {
  Distribution<PhysId> d;
  double w = net.out_weight(u);
  if (w <= 0.0) {
    d.dangling = true;
    return d;
  }
  auto targets = net.targets(u);
  auto weights = net.weights(u);
  std::vector<std::pair<PhysId, double>> raw;
  raw.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) raw.emplace_back(net.physical(targets[i]), weights[i]);
  std::stable_sort(raw.begin(), raw.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [phys, weight] : raw) {
    if (!d.entries.empty() && d.entries.back().first == phys)
      d.entries.back().second += weight;
    else
      d.entries.emplace_back(phys, weight);
  }
  for (auto& e : d.entries) e.second /= w;
  return d;
}

VisitRates visit_rates(const StateNetwork& net, const VisitRateOptions& options) {
  VisitRates out;
  const std::size_t n = net.num_states();
  const double total = net.total_weight();
  if (!(total > 0.0)) throw Error(ErrorKind::InvalidArgument, "network has no out-weight");
  out.rates.resize(n);
  for (StateId u = 0; u < n; ++u) out.rates[u] = net.out_weight(u) / total;
  if (options.mode == RateMode::Empirical) return out;

  // Lazy power iteration p <- (p + pP) / 2 converges on periodic chains too
  // and has the same fixed point. Flow that reaches a dangling state is
  // returned in proportion to the empirical rates.
  const std::vector<double> empirical = out.rates;
  std::vector<double> p = empirical;
  std::vector<double> next(n);
  out.converged = false;
  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    double lost = 0.0;
    for (StateId u = 0; u < n; ++u) {
      if (p[u] == 0.0 || net.is_dangling(u)) continue;
      auto targets = net.targets(u);
      auto weights = net.weights(u);
      double scale = p[u] / net.out_weight(u);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        if (net.is_dangling(targets[i]))
          lost += weights[i] * scale;
        else
          next[targets[i]] += weights[i] * scale;
      }
    }
    double change = 0.0;
    for (StateId u = 0; u < n; ++u) {
      double step = 0.5 * (p[u] + next[u] + lost * empirical[u]);
      change += std::abs(step - p[u]);
      next[u] = step;
    }
    p.swap(next);
    out.iterations = it;
    if (change < options.tolerance) {
      out.converged = true;
      break;
    }
  }
  double sum = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& x : p) x /= sum;
  out.rates = std::move(p);
  if (!out.converged)
    out.warning = "stationary power iteration did not converge in " +
                  std::to_string(options.max_iterations) + " iterations; using last iterate";
  return out;
}

void write_state_network(std::ostream& out, const StateNetwork& net) {
  out << "# flowlump state network, order " << net.order() << '\n';
  out << "*Vertices " << net.num_physical() << '\n';
  for (std::size_t i = 0; i < net.num_physical(); ++i)
    out << i << ' ' << quote(net.physical_names()[i]) << '\n';
  out << "*States " << net.num_states() << '\n';
  for (const auto& s : net.states()) {
    out << s.id << ' ' << s.physical << " \"";
    for (std::size_t i = 0; i < s.context.size(); ++i) out << (i ? " " : "") << s.context[i];
    out << "\"\n";
  }
  out << "*Links " << net.num_links() << '\n';
  for (StateId u = 0; u < net.num_states(); ++u) {
    auto targets = net.targets(u);
    auto weights = net.weights(u);
    for (std::size_t i = 0; i < targets.size(); ++i)
      out << u << ' ' << targets[i] << ' ' << format_double(weights[i]) << '\n';
  }
}

StateNetwork read_state_network(std::istream& in) {
  std::vector<std::string> names;
  std::vector<StateNode> states;
  std::vector<LinkTriple> links;
  int order = 1;
  enum class Block { None, Vertices, States, Links } block = Block::None;
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::Format, "state network line " + std::to_string(line_no) + ": " + what);
  };
  auto to_u32 = [&](const std::string& tok) -> std::uint32_t {
    try {
      std::size_t used = 0;
      unsigned long v = std::stoul(tok, &used);
      if (used != tok.size()) fail("bad integer '" + tok + "'");
      return static_cast<std::uint32_t>(v);
    } catch (const std::logic_error&) {
      fail("bad integer '" + tok + "'");
    }
    return 0;
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto pos = line.find("order ");
      if (pos != std::string_view::npos) order = std::stoi(std::string(line.substr(pos + 6)));
      continue;
    }
    auto tokens = tokenize(line);
    if (line.front() == '*') {
      std::string head = lower(tokens[0]);
      if (head == "*vertices") block = Block::Vertices;
      else if (head == "*states") block = Block::States;
      else if (head == "*links") block = Block::Links;
      else fail("unknown header " + tokens[0]);
      continue;
    }
    switch (block) {
      case Block::Vertices:
        if (to_u32(tokens[0]) != names.size()) fail("vertex ids must be dense");
        names.push_back(tokens.size() > 1 ? tokens[1] : tokens[0]);
        break;
      case Block::States: {
        if (tokens.size() < 2) fail("expected stateId physicalId \"context\"");
        StateNode s;
        s.id = to_u32(tokens[0]);
        s.physical = to_u32(tokens[1]);
        if (tokens.size() > 2)
          for (const auto& c : tokenize(tokens[2])) s.context.push_back(to_u32(c));
        states.push_back(std::move(s));
        break;
      }
      case Block::Links: {
        if (tokens.size() != 3) fail("expected u v w");
        double w = 0.0;
        if (!parse_double(tokens[2], w)) fail("bad weight '" + tokens[2] + "'");
        links.push_back({to_u32(tokens[0]), to_u32(tokens[1]), w});
        break;
      }
      case Block::None:
        fail("data before any header");
    }
  }
  return StateNetwork(std::move(names), std::move(states), std::move(links), order);
}

}  // namespace flowlump
