#include "flowlump/crossval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

namespace flowlump {

std::vector<std::size_t> FoldPlan::fold_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::training_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(i);
  return out;
}

FoldPlan split_folds(const PathCorpus& corpus, std::size_t k, std::uint64_t seed, bool grouped) {
  if (k < 2) throw Error(ErrorKind::InvalidArgument, "k must be at least 2");
  if (k > corpus.paths.size())
    throw Error(ErrorKind::InvalidArgument, "k = " + std::to_string(k) + " exceeds the number of paths (" +
                                                std::to_string(corpus.paths.size()) + ")");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.paths.size(); ++i)
    groups[grouped ? corpus.paths[i].group_key : std::string()].push_back(i);

  Rng rng(seed);
  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(corpus.paths.size(), 0);
  std::size_t next = 0;
  for (auto& [key, members] : groups) {
    rng.shuffle(members);
    for (std::size_t i : members) {
      plan.fold_of[i] = static_cast<std::uint32_t>(next);
      next = (next + 1) % k;
    }
  }
  return plan;
}

TrainedFold prepare_fold(const PathCorpus& training, const TrainOptions& options, const ParallelFor& parallel) {
  TrainedFold fold;
  fold.original = std::make_shared<const StateNetwork>(build_state_network(training, options.order));
  fold.dendrograms = build_dendrograms(*fold.original, options.lumping, parallel);
  return fold;
}

void train_fold(TrainedFold& fold, std::size_t r, const TrainOptions& options) {
  const std::size_t lo = fold.dendrograms.size();
  const std::size_t hi = fold.original->num_states();
  fold.warning.clear();
  std::size_t used = std::clamp(r, lo, hi);
  if (used != r)
    fold.warning = "r = " + std::to_string(r) + " clamped to " + std::to_string(used) + " training states";
  SparseModel previous = std::move(fold.model);
  ModuleMap previous_map = std::move(fold.map);
  fold.model = expand_model(fold.dendrograms, fold.original, used);
  auto rates = visit_rates(fold.model.network, options.rates);
  FlowGraph graph = make_flow_graph(fold.model.network, rates.rates);
  fold.map = optimize(graph, options.optimize);

  // A refinement of the previous model can reuse its partition: split states
  // keep their parent's module, which leaves the training code length intact.
  if (previous.r == 0 || previous.r > used || previous_map.assignment.size() != previous.r) return;
  constexpr ModuleId kNoModule = std::numeric_limits<ModuleId>::max();
  std::vector<ModuleId> lifted(used, kNoModule);
  const std::vector<StateId>& partition = fold.model.partition;
  for (StateId s = 0; s < partition.size(); ++s) {
    ModuleId m = previous_map.assignment[previous.partition[s]];
    ModuleId& slot = lifted[partition[s]];
    if (slot != kNoModule && slot != m) return;  // not a refinement
    slot = m;
  }
  ModuleMap carried = make_module_map(graph, lifted);
  if (carried.codelength_bits < fold.map.codelength_bits - options.optimize.min_improvement) {
    carried.trials = fold.map.trials;
    carried.best_seed = fold.map.best_seed;
    fold.map = std::move(carried);
  }
}

TrainedFold train_fold(const PathCorpus& training, std::size_t r, const TrainOptions& options) {
  TrainedFold fold = prepare_fold(training, options);
  train_fold(fold, r, options);
  return fold;
}

Validation validate_fold(const TrainedFold& fold, const PathCorpus& validation, const TrainOptions& options) {
  const StateNetwork& original = *fold.original;
  const StateNetwork& lumped = fold.model.network;
  const std::vector<StateId>& partition = fold.model.partition;

  // Fallback target per physical node: its lumped state with the largest
  // training out-weight, ties to the smaller id.
  std::vector<StateId> fallback(original.num_physical(), kNone);
  for (StateId s = 0; s < lumped.num_states(); ++s) {
    StateId& best = fallback[lumped.physical(s)];
    if (best == kNone || lumped.out_weight(s) > lumped.out_weight(best)) best = s;
  }

  Validation result;
  BuildStats stats;
  StateNetwork held_out;
  try {
    held_out = build_state_network(validation, options.order, &stats);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NoWindows) throw;
    throw Error(ErrorKind::NoProjectableFlow, "validation corpus has no windows at this order");
  }

  std::vector<StateId> target(held_out.num_states(), kNone);
  std::vector<bool> fell_back(held_out.num_states(), false);
  for (StateId v = 0; v < held_out.num_states(); ++v) {
    const StateNode& node = held_out.state(v);
    if (node.physical >= original.num_physical()) continue;
    if (auto hit = original.find_state(node.context, node.physical)) {
      target[v] = partition[*hit];
    } else {
      target[v] = fallback[node.physical];
      fell_back[v] = target[v] != kNone;
    }
  }

  std::vector<LinkTriple> links;
  for (StateId v = 0; v < held_out.num_states(); ++v) {
    auto targets = held_out.targets(v);
    auto weights = held_out.weights(v);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const StateId a = target[v];
      const StateId b = target[targets[i]];
      if (a == kNone || b == kNone) {
        result.dropped_weight += weights[i];
        continue;
      }
      if (fell_back[v] || fell_back[targets[i]]) result.fallback_weight += weights[i];
      links.push_back({a, b, weights[i]});
    }
  }
  if (links.empty()) throw Error(ErrorKind::NoProjectableFlow, "no validation flow projects onto the training model");

  std::vector<StateNode> states = lumped.states();
  StateNetwork projected(lumped.physical_names(), std::move(states), std::move(links), lumped.order());
  auto rates = visit_rates(projected, options.rates);
  result.codelength_bits = map_equation(projected, rates.rates, fold.map.assignment);
  return result;
}

std::vector<std::size_t> geometric_schedule(std::size_t n, std::size_t total, double factor) {
  if (!(factor > 1.0)) throw Error(ErrorKind::InvalidArgument, "schedule factor must exceed 1");
  if (n == 0 || total < n) throw Error(ErrorKind::InvalidArgument, "schedule needs 0 < N <= total states");
  std::vector<std::size_t> out;
  for (int i = 0;; ++i) {
    double x = std::ceil(static_cast<double>(n) * std::pow(factor, i) - 1e-9);
    std::size_t r = x >= static_cast<double>(total) ? total : static_cast<std::size_t>(x);
    if (out.empty() || r > out.back()) out.push_back(r);
    if (r == total) break;
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::size_t select_point(std::span<const CVPoint> points) {
  std::size_t best = kNone;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (std::isnan(points[i].median_valid_bits)) continue;
    if (best == kNone) {
      best = i;
      continue;
    }
    const double b = points[best].median_valid_bits;
    if (points[i].median_valid_bits < b - 1e-12 * std::max(1.0, std::abs(b))) best = i;
  }
  return best;
}

CVReport sweep(const PathCorpus& corpus, const SweepOptions& options, const ParallelFor& parallel) {
  const std::size_t k = options.k;
  const StateNetwork full = build_state_network(corpus, options.train.order);

  CVReport report;
  report.k = k;
  report.seed = options.seed;
  report.order = options.train.order;
  report.trials = options.train.optimize.trials;
  report.schedule_factor = options.schedule_factor;
  report.num_physical = full.num_occupied_physical();
  report.num_states = full.num_states();

  std::vector<std::size_t> schedule = options.schedule;
  if (schedule.empty()) {
    schedule = geometric_schedule(report.num_physical, report.num_states, options.schedule_factor);
  } else {
    for (std::size_t i = 1; i < schedule.size(); ++i)
      if (schedule[i] <= schedule[i - 1])
        throw Error(ErrorKind::InvalidArgument, "schedule must be strictly increasing");
  }

  const FoldPlan plan = split_folds(corpus, k, options.seed, options.grouped);
  std::vector<PathCorpus> validation(k);
  std::vector<TrainedFold> folds(k);
  std::vector<std::string> fold_error(k);
  std::vector<TrainOptions> fold_options(k, options.train);
  parallel(k, [&](std::size_t f) {
    fold_options[f].optimize.seed = mix_seed(options.seed, f + 1);
    auto valid_idx = plan.fold_indices(f);
    auto train_idx = plan.training_indices(f);
    validation[f] = corpus.subset(valid_idx);
    try {
      folds[f] = prepare_fold(corpus.subset(train_idx), fold_options[f]);
    } catch (const Error& e) {
      fold_error[f] = e.what();
    }
  });

  const std::size_t min_valid = k >= 2 ? k - 2 : k;
  std::size_t best = kNone;
  std::size_t increases = 0;
  for (std::size_t r : schedule) {
    std::vector<CVRow> rows(k);
    parallel(k, [&](std::size_t f) {
      CVRow& row = rows[f];
      row.r = r;
      row.fold = f;
      if (!fold_error[f].empty()) {
        row.note = fold_error[f];
        return;
      }
      try {
        train_fold(folds[f], r, fold_options[f]);
        row.train_bits = folds[f].map.codelength_bits;
        row.note = folds[f].warning;
        Validation v = validate_fold(folds[f], validation[f], fold_options[f]);
        row.valid_bits = v.codelength_bits;
        row.dropped_weight = v.dropped_weight;
        row.valid = true;
      } catch (const Error& e) {
        row.note = e.what();
      }
    });

    CVPoint point;
    point.r = r;
    std::vector<double> train, valid;
    for (const CVRow& row : rows) {
      if (!row.note.empty()) report.warnings.push_back("r " + std::to_string(r) + " fold " + std::to_string(row.fold) + ": " + row.note);
      if (!row.valid) continue;
      train.push_back(row.train_bits);
      valid.push_back(row.valid_bits);
    }
    point.valid_folds = valid.size();
    if (point.valid_folds < min_valid) {
      point.median_train_bits = point.median_valid_bits = std::numeric_limits<double>::quiet_NaN();
      report.warnings.push_back("r " + std::to_string(r) + ": only " + std::to_string(point.valid_folds) +
                                " valid folds, point skipped");
    } else {
      point.median_train_bits = median(train);
      point.median_valid_bits = median(valid);
    }
    report.schedule.push_back(r);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    report.points.push_back(point);

    if (std::isnan(point.median_valid_bits)) continue;
    const std::size_t now = select_point(report.points);
    if (now != best) {
      best = now;
      increases = 0;
    } else if (point.median_valid_bits > report.points[best].median_valid_bits) {
      ++increases;
    }
    if (options.early_stop && increases >= options.patience) break;
  }
  if (best == kNone) throw Error(ErrorKind::NoProjectableFlow, "no schedule point had enough valid folds");
  report.selected_r = report.points[best].r;
  return report;
}

void write_cv_report(std::ostream& out, const CVReport& report) {
  out << "r\tfold\ttrain_bits\tvalid_bits\tdropped_weight\n";
  for (const CVRow& row : report.rows) {
    out << row.r << '\t' << row.fold << '\t';
    if (row.valid)
      out << format_double(row.train_bits) << '\t' << format_double(row.valid_bits) << '\t'
          << format_double(row.dropped_weight) << '\n';
    else
      out << "nan\tnan\tnan\n";
  }
  out << "# summary\n";
  out << "# k\t" << report.k << '\n';
  out << "# seed\t" << report.seed << '\n';
  out << "# order\t" << report.order << '\n';
  out << "# trials_per_fold\t" << report.trials << '\n';
  out << "# schedule_factor\t" << format_double(report.schedule_factor) << '\n';
  out << "# physical_nodes\t" << report.num_physical << '\n';
  out << "# state_nodes\t" << report.num_states << '\n';
  out << "# r\tvalid_folds\tmedian_train_bits\tmedian_valid_bits\n";
  for (const CVPoint& p : report.points)
    out << "# " << p.r << '\t' << p.valid_folds << '\t' << format_double(p.median_train_bits) << '\t'
        << format_double(p.median_valid_bits) << '\n';
  out << "# selected_r\t" << report.selected_r << '\n';
  for (const std::string& w : report.warnings) out << "# warning\t" << w << '\n';
}

}  // namespace flowlump
