#include "flowlump/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <unordered_map>

namespace flowlump {

PersistenceReport flow_persistence(const StateNetwork& net, std::span<const double> rates,
                                   std::span<const ModuleId> assignment, std::string basis) {
  const std::size_t n = net.num_states();
  if (rates.size() != n || assignment.size() != n)
    throw Error(ErrorKind::InvalidArgument, "rates and assignment must cover every state");
  std::size_t k = 0;
  for (ModuleId m : assignment) k = std::max<std::size_t>(k, static_cast<std::size_t>(m) + 1);
  PersistenceReport report;
  report.basis = std::move(basis);
  std::vector<double> inside(k, 0.0);
  report.module_flow.assign(k, 0.0);
  for (StateId u = 0; u < n; ++u) {
    if (net.is_dangling(u)) continue;
    const ModuleId m = assignment[u];
    report.module_flow[m] += rates[u];
    auto targets = net.targets(u);
    auto weights = net.weights(u);
    double stay = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i)
      if (assignment[targets[i]] == m) stay += weights[i];
    inside[m] += rates[u] * stay / net.out_weight(u);
  }
  report.per_module.assign(k, std::numeric_limits<double>::quiet_NaN());
  double weighted = 0.0, total = 0.0;
  for (std::size_t m = 0; m < k; ++m) {
    if (report.module_flow[m] <= 0.0) {
      report.empty_modules.push_back(static_cast<ModuleId>(m));
      continue;
    }
    report.per_module[m] = inside[m] / report.module_flow[m];
    weighted += inside[m];
    total += report.module_flow[m];
  }
  report.overall = total > 0.0 ? weighted / total : 0.0;
  return report;
}

Classification read_classification(std::istream& in, std::span<const std::string> physical_names) {
  std::unordered_map<std::string, PhysId> ids;
  for (std::size_t i = 0; i < physical_names.size(); ++i) ids.emplace(physical_names[i], static_cast<PhysId>(i));
  Classification c;
  c.categories.resize(physical_names.size());
  std::set<std::string> unmatched;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(ErrorKind::Format, "classification line " + std::to_string(line_no) + ": expected name<TAB>category");
    std::string name = line.substr(0, tab), category = line.substr(tab + 1);
    auto it = ids.find(name);
    if (it == ids.end()) {
      unmatched.insert(name);
      continue;
    }
    c.categories[it->second].insert(category);
  }
  c.unmatched_names.assign(unmatched.begin(), unmatched.end());
  return c;
}

ExternalPersistence external_persistence(const StateNetwork& net, std::span<const double> rates,
                                         const Classification& classification) {
  if (classification.categories.size() != net.num_physical())
    throw Error(ErrorKind::InvalidArgument, "classification does not match the network's physical nodes");
  const auto& cats = classification.categories;
  auto share = [&](PhysId a, PhysId b) {
    const auto& x = cats[a];
    const auto& y = cats[b];
    auto i = x.begin();
    auto j = y.begin();
    while (i != x.end() && j != y.end()) {
      if (*i < *j) ++i;
      else if (*j < *i) ++j;
      else return true;
    }
    return false;
  };
  double total = 0.0, covered = 0.0, persists = 0.0;
  for (StateId u = 0; u < net.num_states(); ++u) {
    if (net.is_dangling(u)) continue;
    const PhysId pu = net.physical(u);
    auto targets = net.targets(u);
    auto weights = net.weights(u);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double f = rates[u] * weights[i] / net.out_weight(u);
      total += f;
      const PhysId pv = net.physical(targets[i]);
      if (cats[pu].empty() || cats[pv].empty()) continue;
      covered += f;
      if (share(pu, pv)) persists += f;
    }
  }
  if (!(covered > 0.0)) throw Error(ErrorKind::NoCoverage, "classification covers no flow");
  return {persists / covered, covered / total};
}

std::vector<OverlapRow> overlap_table(const StateNetwork& net, std::span<const double> rates,
                                      std::span<const ModuleId> assignment, double threshold) {
  const std::size_t n = net.num_states();
  if (rates.size() != n || assignment.size() != n)
    throw Error(ErrorKind::InvalidArgument, "rates and assignment must cover every state");
  std::vector<double> phys_total(net.num_physical(), 0.0);
  std::map<std::pair<PhysId, ModuleId>, double> by_module;
  for (StateId u = 0; u < n; ++u) {
    if (rates[u] <= 0.0) continue;
    phys_total[net.physical(u)] += rates[u];
    by_module[{net.physical(u), assignment[u]}] += rates[u];
  }
  std::vector<OverlapRow> rows;
  for (const auto& [key, rate] : by_module) {
    double fraction = rate / phys_total[key.first];
    if (fraction >= threshold) rows.push_back({key.first, key.second, fraction});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const OverlapRow& a, const OverlapRow& b) {
    if (a.physical != b.physical) return a.physical < b.physical;
    return a.fraction > b.fraction;
  });
  return rows;
}

std::vector<AllocationRow> state_allocation(std::span<const LumpDendrogram> dendrograms,
                                            std::span<const std::size_t> schedule) {
  std::size_t total = 0;
  for (const auto& d : dendrograms) total += d.states.size();
  const std::size_t n = dendrograms.size();
  auto sequence = unlumping_sequence(dendrograms);
  std::unordered_map<PhysId, std::size_t> count;
  for (const auto& d : dendrograms) count[d.physical] = 1;
  std::vector<std::size_t> sorted(schedule.begin(), schedule.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<AllocationRow> rows;
  std::size_t consumed = 0;
  for (std::size_t r : sorted) {
    if (r < n || r > total)
      throw Error(ErrorKind::OutOfRange, "state count " + std::to_string(r) + " outside [" + std::to_string(n) + ", " +
                                             std::to_string(total) + "]");
    while (n + consumed < r) ++count[sequence[consumed++]];
    for (const auto& d : dendrograms) rows.push_back({r, d.physical, count[d.physical]});
  }
  return rows;
}

std::size_t count_modules(const PersistenceReport& report, double threshold) {
  double total = 0.0;
  for (double f : report.module_flow) total += f;
  std::size_t count = 0;
  for (double f : report.module_flow)
    if (total > 0.0 && f / total >= threshold) ++count;
  return count;
}

}  // namespace flowlump
