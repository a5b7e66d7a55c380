// flowlump command-line tool: build state networks from pathways, lump them
// into sparse models, map them, cross-validate the model size, and report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowlump/common.hpp"
#include "flowlump/corpus.hpp"
#include "flowlump/crossval.hpp"
#include "flowlump/export.hpp"
#include "flowlump/lumping.hpp"
#include "flowlump/mapeq.hpp"
#include "flowlump/metrics.hpp"
#include "flowlump/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace flowlump;

namespace {

struct Common {
  std::size_t threads = 0;
  bool json_errors = false;
};

struct InputArgs {
  std::string paths;
  std::string network;
  int order = 2;
  bool grouped = false;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

template <class Fn>
void write_with(const std::string& path, Fn&& fn) {
  std::ostringstream ss;
  fn(ss);
  write_text(path, ss.str());
}

std::string with_extension(const std::string& path, const std::string& ext) {
  fs::path p(path);
  p.replace_extension(ext);
  return p.string();
}

void write_config(const std::string& path, const ordered_json& config) { write_text(path, config.dump(2) + "\n"); }

PathCorpus load_corpus(const InputArgs& in) {
  ParseOptions opts;
  opts.grouped = in.grouped;
  ParseResult parsed = parse_paths_file(in.paths, opts);
  for (const auto& d : parsed.rejected)
    std::cerr << "warning: " << in.paths << ":" << d.line << ": " << d.message << '\n';
  return std::move(parsed.corpus);
}

StateNetwork load_network(const InputArgs& in) {
  if (!in.network.empty()) {
    std::istringstream ss(read_text(in.network));
    return read_state_network(ss);
  }
  BuildStats stats;
  StateNetwork net = build_state_network(load_corpus(in), in.order, &stats);
  if (stats.skipped_paths > 0)
    std::cerr << "warning: " << stats.skipped_paths << " paths shorter than order + 1 were skipped\n";
  return net;
}

ordered_json input_json(const InputArgs& in) {
  ordered_json j;
  if (!in.network.empty()) {
    j["network"] = in.network;
  } else {
    j["paths"] = in.paths;
    j["order"] = in.order;
    j["grouped"] = in.grouped;
  }
  return j;
}

void add_input(CLI::App* cmd, InputArgs& in, bool allow_network) {
  auto* paths = cmd->add_option("paths", in.paths, "Pathway file")->check(CLI::ExistingFile);
  cmd->add_option("--order", in.order, "Markov order of the state network")->capture_default_str()->check(CLI::Range(1, 16));
  cmd->add_flag("--grouped", in.grouped, "First column of each path line is a group key");
  if (allow_network) {
    auto* net = cmd->add_option("--network", in.network, "Read a saved state network instead of paths")
                    ->check(CLI::ExistingFile);
    paths->excludes(net);
    net->excludes(paths);
  } else {
    paths->required();
  }
}

void require_input(const InputArgs& in) {
  if (in.paths.empty() && in.network.empty()) throw CLI::ValidationError("input", "give a paths file or --network");
}

ParallelFor make_parallel(const Common& common) {
  std::size_t threads = common.threads;
  if (const char* env = std::getenv("FLOWLUMP_THREADS"); env && *env) {
    try {
      threads = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::InvalidArgument, std::string("FLOWLUMP_THREADS is not a number: ") + env);
    }
  }
  if (threads == 1) return sequential_for;
  return make_thread_pool_for(threads);
}

VisitRateOptions rate_options(bool stationary) {
  VisitRateOptions o;
  o.mode = stationary ? RateMode::Stationary : RateMode::Empirical;
  return o;
}

std::vector<double> rates_for(const StateNetwork& net, bool stationary) {
  VisitRates r = visit_rates(net, rate_options(stationary));
  if (!r.warning.empty()) std::cerr << "warning: " << r.warning << '\n';
  return std::move(r.rates);
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  InputArgs in;
  std::string out;
};

void run_build(const BuildArgs& a) {
  StateNetwork net = load_network(a.in);
  write_with(a.out, [&](std::ostream& o) { write_state_network(o, net); });
  write_config(a.out + ".config.json",
               {{"subcommand", "build"}, {"input", input_json(a.in)}, {"output", a.out}});
  std::cerr << "states " << net.num_states() << " links " << net.num_links() << " physical "
            << net.num_occupied_physical() << '\n';
}

struct LumpArgs {
  InputArgs in;
  std::string out;
  std::optional<std::size_t> target_r;
  std::string model;
};

void run_lump(const LumpArgs& a, const ParallelFor& parallel) {
  auto net = std::make_shared<const StateNetwork>(load_network(a.in));
  auto dendros = build_dendrograms(*net, {}, parallel);
  write_with(a.out, [&](std::ostream& o) { write_dendrograms(o, dendros); });
  ordered_json config{{"subcommand", "lump"}, {"input", input_json(a.in)}, {"output", a.out}};
  if (a.target_r) {
    SparseModel model = expand_model(dendros, net, *a.target_r);
    std::string path = a.model.empty() ? with_extension(a.out, ".r" + std::to_string(*a.target_r) + ".snet") : a.model;
    write_with(path, [&](std::ostream& o) { write_state_network(o, model.network); });
    config["target_r"] = *a.target_r;
    config["model"] = path;
    std::cerr << "r " << model.r << " entropy_rate_bits " << format_double(model.entropy_rate_bits, 10) << '\n';
  }
  std::cerr << "states " << net->num_states() << " physical " << dendros.size() << " entropy_rate_bits "
            << format_double(entropy_rate(*net), 10) << '\n';
  write_config(a.out + ".config.json", config);
}

struct ClusterArgs {
  InputArgs in;
  std::string out;
  std::optional<std::size_t> target_r;
  std::string dendro;
  std::string save_dendro;
  std::size_t trials = 10;
  std::uint64_t seed = 123;
  bool stationary = false;
  bool hierarchical = false;
  std::string json;
};

void run_cluster(const ClusterArgs& a, const ParallelFor& parallel) {
  auto original = std::make_shared<const StateNetwork>(load_network(a.in));
  StateNetwork net;
  ordered_json config{{"subcommand", "cluster"}, {"input", input_json(a.in)}};
  if (a.target_r) {
    std::vector<LumpDendrogram> dendros;
    if (!a.dendro.empty()) {
      std::istringstream ss(read_text(a.dendro));
      dendros = read_dendrograms(ss);
    } else {
      dendros = build_dendrograms(*original, {}, parallel);
    }
    if (!a.save_dendro.empty()) write_with(a.save_dendro, [&](std::ostream& o) { write_dendrograms(o, dendros); });
    net = expand_model(dendros, original, *a.target_r).network;
    config["target_r"] = *a.target_r;
    if (!a.dendro.empty()) config["dendrograms"] = a.dendro;
  } else {
    if (!a.dendro.empty() || !a.save_dendro.empty())
      throw CLI::ValidationError("--dendro", "dendrogram files need --target-r");
    net = *original;
  }
  auto rates = rates_for(net, a.stationary);
  OptimizeOptions opt;
  opt.trials = a.trials;
  opt.seed = a.seed;
  FlowGraph graph = make_flow_graph(net, rates);
  ModuleMap map = optimize(graph, opt, parallel);
  if (a.hierarchical) {
    HierarchyOptions h;
    h.optimize = opt;
    map = hierarchical(graph, map, h);
  }
  const std::string net_path = with_extension(a.out, ".snet");
  write_with(net_path, [&](std::ostream& o) { write_state_network(o, net); });
  write_with(a.out, [&](std::ostream& o) { write_tree(o, net, map); });
  if (!a.json.empty()) write_with(a.json, [&](std::ostream& o) { write_map_json(o, net, map); });
  config["trials"] = a.trials;
  config["seed"] = a.seed;
  config["rates"] = a.stationary ? "stationary" : "empirical";
  config["hierarchical"] = a.hierarchical;
  config["tree"] = a.out;
  config["network"] = net_path;
  write_config(a.out + ".config.json", config);
  std::cerr << "modules " << map.modules.size() << " codelength_bits " << format_double(map.codelength_bits, 10)
            << " one_module_bits " << format_double(map.one_module_codelength_bits, 10) << '\n';
}

struct CvArgs {
  InputArgs in;
  std::string out;
  std::size_t k = 10;
  std::uint64_t seed = 7;
  double factor = 1.4142135623730951;
  std::size_t trials = 3;
  std::size_t final_trials = 10;
  std::vector<std::size_t> schedule;
  bool stationary = false;
  bool no_early_stop = false;
  std::optional<std::size_t> target_r;
};

void run_cv(const CvArgs& a, const ParallelFor& parallel) {
  if (a.target_r) throw CLI::ValidationError("--target-r", "cv selects r itself; --target-r cannot be combined with cv");
  PathCorpus corpus = load_corpus(a.in);
  SweepOptions s;
  s.k = a.k;
  s.seed = a.seed;
  s.grouped = a.in.grouped;
  s.schedule_factor = a.factor;
  s.schedule = a.schedule;
  s.early_stop = !a.no_early_stop;
  s.train.order = a.in.order;
  s.train.rates = rate_options(a.stationary);
  s.train.optimize.trials = a.trials;
  CVReport report = sweep(corpus, s, parallel);

  // Final model on the whole corpus at the selected size.
  auto original = std::make_shared<const StateNetwork>(build_state_network(corpus, a.in.order));
  auto dendros = build_dendrograms(*original, {}, parallel);
  SparseModel model = expand_model(dendros, original, report.selected_r);
  auto rates = rates_for(model.network, a.stationary);
  OptimizeOptions opt;
  opt.trials = a.final_trials;
  opt.seed = a.seed;
  ModuleMap map = optimize(model.network, rates, opt, parallel);

  const fs::path dir(a.out);
  write_with((dir / "cv.tsv").string(), [&](std::ostream& o) { write_cv_report(o, report); });
  write_with((dir / "model.dendro").string(), [&](std::ostream& o) { write_dendrograms(o, dendros); });
  write_with((dir / "model.snet").string(), [&](std::ostream& o) { write_state_network(o, model.network); });
  write_with((dir / "model.tree").string(), [&](std::ostream& o) { write_tree(o, model.network, map); });
  ordered_json config{{"subcommand", "cv"},
                      {"input", input_json(a.in)},
                      {"k", a.k},
                      {"seed", a.seed},
                      {"schedule_factor", a.factor},
                      {"schedule", a.schedule},
                      {"early_stop", !a.no_early_stop},
                      {"trials_per_fold", a.trials},
                      {"final_trials", a.final_trials},
                      {"rates", a.stationary ? "stationary" : "empirical"},
                      {"selected_r", report.selected_r},
                      {"output_dir", a.out}};
  write_config((dir / "config.json").string(), config);
  std::cerr << "selected_r " << report.selected_r << " of " << report.num_states << " states (N = "
            << report.num_physical << "), modules " << map.modules.size() << '\n';
}

struct MetricsArgs {
  std::string network;
  std::string map;
  std::string classification;
  std::string out;
  double overlap_threshold = 0.0;
  double module_threshold = 1e-4;
  bool stationary = false;
  std::string dendro;
  std::vector<std::size_t> schedule;
};

void run_metrics(const MetricsArgs& a) {
  std::istringstream net_in(read_text(a.network));
  StateNetwork net = read_state_network(net_in);
  std::istringstream tree_in(read_text(a.map));
  TreeFile tree = read_tree(tree_in);
  auto rates = rates_for(net, a.stationary);
  auto assignment = tree_assignment(tree, net.num_states(), 1);

  PersistenceReport pers = flow_persistence(net, rates, assignment, a.map);
  auto overlap = overlap_table(net, rates, assignment, a.overlap_threshold);

  ordered_json doc;
  doc["network"] = a.network;
  doc["map"] = a.map;
  doc["overall_persistence"] = pers.overall;
  doc["modules_above_threshold"] = count_modules(pers, a.module_threshold);
  doc["module_threshold"] = a.module_threshold;
  ordered_json modules = ordered_json::array();
  for (std::size_t m = 0; m < pers.per_module.size(); ++m) {
    if (std::isnan(pers.per_module[m])) continue;
    modules.push_back({{"module", m + 1}, {"flow", pers.module_flow[m]}, {"persistence", pers.per_module[m]}});
  }
  doc["modules"] = std::move(modules);
  ordered_json rows = ordered_json::array();
  for (const auto& r : overlap)
    rows.push_back({{"physical", net.physical_names()[r.physical]}, {"module", r.module + 1}, {"fraction", r.fraction}});
  doc["overlap"] = std::move(rows);

  std::ostringstream tsv;
  tsv << "module\tflow\tpersistence\n";
  for (std::size_t m = 0; m < pers.per_module.size(); ++m)
    if (!std::isnan(pers.per_module[m]))
      tsv << m + 1 << '\t' << format_double(pers.module_flow[m]) << '\t' << format_double(pers.per_module[m]) << '\n';
  tsv << "# overall\t" << format_double(pers.overall) << '\n';
  write_text(a.out + ".persistence.tsv", tsv.str());

  std::ostringstream ov;
  ov << "physical\tmodule\tfraction\n";
  for (const auto& r : overlap)
    ov << net.physical_names()[r.physical] << '\t' << r.module + 1 << '\t' << format_double(r.fraction) << '\n';
  write_text(a.out + ".overlap.tsv", ov.str());

  if (!a.classification.empty()) {
    std::istringstream cin(read_text(a.classification));
    Classification c = read_classification(cin, net.physical_names());
    ExternalPersistence ext = external_persistence(net, rates, c);
    doc["external"] = {{"classification", a.classification},
                       {"persistence", ext.persistence},
                       {"coverage", ext.coverage},
                       {"unmatched_names", c.unmatched_names}};
    if (!c.unmatched_names.empty())
      std::cerr << "warning: " << c.unmatched_names.size() << " classification names not in the network\n";
  }

  if (!a.dendro.empty()) {
    std::istringstream din(read_text(a.dendro));
    auto dendros = read_dendrograms(din);
    auto alloc = state_allocation(dendros, a.schedule);
    std::ostringstream at;
    at << "r\tphysical\tstates\n";
    for (const auto& row : alloc) at << row.r << '\t' << net.physical_names()[row.physical] << '\t' << row.states << '\n';
    write_text(a.out + ".allocation.tsv", at.str());
  }

  write_text(a.out + ".json", doc.dump(2) + "\n");
  std::cout << "overall_persistence " << format_double(pers.overall, 6) << " modules "
            << count_modules(pers, a.module_threshold) << '\n';
}

struct ExportArgs {
  std::string network;
  std::string map;
  std::string json;
  double min_module_flow = 0.0;
  bool stationary = false;
};

void run_export(const ExportArgs& a) {
  std::istringstream net_in(read_text(a.network));
  StateNetwork net = read_state_network(net_in);
  std::istringstream tree_in(read_text(a.map));
  TreeFile tree = read_tree(tree_in);
  auto rates = rates_for(net, a.stationary);
  ModuleMap map = module_map_from_tree(make_flow_graph(net, rates), tree);
  ExportOptions opts;
  opts.min_module_flow = a.min_module_flow;
  write_with(a.json, [&](std::ostream& o) { write_map_json(o, net, map, opts); });
}

struct SynthArgs {
  SynthParams params;
  std::uint64_t seed = 1;
  std::string out;
};

void run_synth(const SynthArgs& a) {
  PathCorpus corpus = synthesize(a.params, a.seed);
  write_with(a.out, [&](std::ostream& o) { write_paths(o, corpus); });
  write_config(a.out + ".config.json", {{"subcommand", "synth"},
                                        {"seed", a.seed},
                                        {"physical", a.params.physical},
                                        {"modules", a.params.modules},
                                        {"hubs", a.params.hubs},
                                        {"rho", a.params.rho},
                                        {"length", a.params.length},
                                        {"paths", a.params.paths},
                                        {"hub_prob", a.params.hub_prob},
                                        {"leak", a.params.leak},
                                        {"output", a.out}});
}

int report_error(bool json, const std::string& kind, const std::string& message, int code) {
  if (json)
    std::cerr << ordered_json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  else
    std::cerr << "error: " << message << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowlump: sparse memory networks and their flow maps"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "Worker threads (0 = all cores; FLOWLUMP_THREADS overrides)");
  app.add_flag("--json-errors", common.json_errors, "Print errors as JSON on stderr");

  BuildArgs build;
  auto* cmd_build = app.add_subcommand("build", "Build a state network from pathways");
  add_input(cmd_build, build.in, false);
  cmd_build->add_option("-o,--out", build.out, "Output .snet file")->required();

  LumpArgs lump;
  auto* cmd_lump = app.add_subcommand("lump", "Compute lumping dendrograms");
  add_input(cmd_lump, lump.in, true);
  cmd_lump->add_option("-o,--out,--save-dendro", lump.out, "Output .dendro file")->required();
  cmd_lump->add_option("--target-r", lump.target_r, "Also write the model with this many states");
  cmd_lump->add_option("--model", lump.model, "Path of the --target-r model (.snet)");

  ClusterArgs cluster;
  auto* cmd_cluster = app.add_subcommand("cluster", "Find the map of a (lumped) state network");
  add_input(cmd_cluster, cluster.in, true);
  cmd_cluster->add_option("-o,--out", cluster.out, "Output .tree file (the clustered network goes next to it)")->required();
  cmd_cluster->add_option("--target-r", cluster.target_r, "Lump to this many states before clustering");
  cmd_cluster->add_option("--dendro", cluster.dendro, "Reuse saved dendrograms")->check(CLI::ExistingFile);
  cmd_cluster->add_option("--save-dendro", cluster.save_dendro, "Save the dendrograms");
  cmd_cluster->add_option("--trials", cluster.trials, "Optimizer trials")->capture_default_str()->check(CLI::PositiveNumber);
  cmd_cluster->add_option("--seed", cluster.seed, "Seed")->capture_default_str();
  cmd_cluster->add_flag("--stationary", cluster.stationary, "Use stationary instead of empirical visit rates");
  cmd_cluster->add_flag("--hierarchical", cluster.hierarchical, "Search for nested modules");
  cmd_cluster->add_option("--json", cluster.json, "Also export the map as JSON");

  CvArgs cv;
  auto* cmd_cv = app.add_subcommand("cv", "Select the number of states by cross-validation");
  add_input(cmd_cv, cv.in, false);
  cmd_cv->add_option("-o,--out", cv.out, "Output directory")->required();
  cmd_cv->add_option("--k", cv.k, "Folds")->capture_default_str()->check(CLI::Range(2, 1000000));
  cmd_cv->add_option("--seed", cv.seed, "Seed")->capture_default_str();
  cmd_cv->add_option("--schedule-factor", cv.factor, "Geometric step of the state-count schedule")->capture_default_str();
  cmd_cv->add_option("--schedule", cv.schedule, "Explicit, strictly increasing state counts")->delimiter(',');
  cmd_cv->add_option("--trials", cv.trials, "Optimizer trials per fold")->capture_default_str()->check(CLI::PositiveNumber);
  cmd_cv->add_option("--final-trials", cv.final_trials, "Optimizer trials for the final map")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd_cv->add_flag("--stationary", cv.stationary, "Use stationary instead of empirical visit rates");
  cmd_cv->add_flag("--no-early-stop", cv.no_early_stop, "Evaluate the whole schedule");
  cmd_cv->add_option("--target-r", cv.target_r, "Not valid with cv")->group("");

  MetricsArgs metrics;
  auto* cmd_metrics = app.add_subcommand("metrics", "Persistence, overlap and allocation reports");
  cmd_metrics->add_option("--network", metrics.network, "Clustered .snet")->required()->check(CLI::ExistingFile);
  cmd_metrics->add_option("--map", metrics.map, ".tree file of that network")->required()->check(CLI::ExistingFile);
  cmd_metrics->add_option("--classification", metrics.classification, "name<TAB>category file")->check(CLI::ExistingFile);
  cmd_metrics->add_option("-o,--out", metrics.out, "Output prefix")->required();
  cmd_metrics->add_option("--overlap-threshold", metrics.overlap_threshold, "Hide overlap rows below this fraction")
      ->capture_default_str();
  cmd_metrics->add_option("--module-threshold", metrics.module_threshold, "Count modules above this flow share")
      ->capture_default_str();
  cmd_metrics->add_flag("--stationary", metrics.stationary, "Use stationary instead of empirical visit rates");
  auto* dendro_opt = cmd_metrics->add_option("--dendro", metrics.dendro, "Dendrograms for the allocation table")
                         ->check(CLI::ExistingFile);
  cmd_metrics->add_option("--schedule", metrics.schedule, "State counts for the allocation table")
      ->delimiter(',')
      ->needs(dendro_opt);

  ExportArgs exp;
  auto* cmd_export = app.add_subcommand("export", "Export a map as JSON");
  cmd_export->add_option("--network", exp.network, "Clustered .snet")->required()->check(CLI::ExistingFile);
  cmd_export->add_option("--map", exp.map, ".tree file of that network")->required()->check(CLI::ExistingFile);
  cmd_export->add_option("--json", exp.json, "Output JSON file")->required();
  cmd_export->add_option("--min-module-flow", exp.min_module_flow, "Leave out modules below this flow share")
      ->capture_default_str();
  cmd_export->add_flag("--stationary", exp.stationary, "Use stationary instead of empirical visit rates");

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a planted-memory pathway corpus");
  cmd_synth->add_option("--n", synth.params.physical, "Physical nodes")->capture_default_str();
  cmd_synth->add_option("--modules", synth.params.modules, "Planted modules")->capture_default_str();
  cmd_synth->add_option("--planted-hubs", synth.params.hubs, "Hub nodes")->capture_default_str();
  cmd_synth->add_option("--rho", synth.params.rho, "Return probability through hubs")->capture_default_str();
  cmd_synth->add_option("--length", synth.params.length, "Nodes per path")->capture_default_str();
  cmd_synth->add_option("--paths", synth.params.paths, "Number of paths")->capture_default_str();
  cmd_synth->add_option("--hub-prob", synth.params.hub_prob, "Probability of stepping to a hub")->capture_default_str();
  cmd_synth->add_option("--leak", synth.params.leak, "Probability of leaving the module directly")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  cmd_synth->add_option("-o,--out", synth.out, "Output paths file")->required();

  bool json_errors = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--json-errors") json_errors = true;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(json_errors, "Usage", e.what(), 2);
  }

  try {
    ParallelFor parallel = make_parallel(common);
    if (cmd_build->parsed()) run_build(build);
    else if (cmd_lump->parsed()) { require_input(lump.in); run_lump(lump, parallel); }
    else if (cmd_cluster->parsed()) { require_input(cluster.in); run_cluster(cluster, parallel); }
    else if (cmd_cv->parsed()) run_cv(cv, parallel);
    else if (cmd_metrics->parsed()) run_metrics(metrics);
    else if (cmd_export->parsed()) run_export(exp);
    else if (cmd_synth->parsed()) run_synth(synth);
  } catch (const CLI::ParseError& e) {
    return report_error(json_errors, "Usage", e.what(), 2);
  } catch (const Error& e) {
    return report_error(json_errors, to_string(e.kind()), e.what(), 1);
  } catch (const fs::filesystem_error& e) {
    return report_error(json_errors, "Io", e.what(), 1);
  } catch (const std::exception& e) {
    return report_error(json_errors, "Internal", e.what(), 1);
  }
  return 0;
}
