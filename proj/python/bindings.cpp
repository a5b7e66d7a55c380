#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>
#include <unordered_map>

#include "flowlump/crossval.hpp"
#include "flowlump/export.hpp"
#include "flowlump/lumping.hpp"
#include "flowlump/mapeq.hpp"
#include "flowlump/metrics.hpp"
#include "flowlump/synth.hpp"

namespace py = pybind11;
using namespace flowlump;

namespace {

using NetworkPtr = std::shared_ptr<StateNetwork>;

// Dendrograms together with the network they were built from, so that
// expansion never outlives its source.
struct Dendrograms {
  NetworkPtr original;
  std::vector<LumpDendrogram> trees;
};

ParallelFor pool_for(std::size_t threads) {
  return threads == 1 ? ParallelFor(sequential_for) : make_thread_pool_for(threads);
}

VisitRateOptions rate_options(bool stationary) {
  VisitRateOptions o;
  o.mode = stationary ? RateMode::Stationary : RateMode::Empirical;
  return o;
}

std::vector<double> rates_of(const StateNetwork& net, bool stationary) {
  return visit_rates(net, rate_options(stationary)).rates;
}

PathCorpus corpus_from_lists(const std::vector<std::vector<std::string>>& paths,
                             const std::optional<std::vector<double>>& weights) {
  if (weights && weights->size() != paths.size())
    throw Error(ErrorKind::InvalidArgument, "weights must match the number of paths");
  PathCorpus c;
  std::unordered_map<std::string, PhysId> ids;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    PathRecord record;
    record.weight = weights ? (*weights)[i] : 1.0;
    if (paths[i].size() < 2) throw Error(ErrorKind::InvalidArgument, "path " + std::to_string(i) + " has fewer than 2 nodes");
    if (!(record.weight > 0.0)) throw Error(ErrorKind::InvalidArgument, "path " + std::to_string(i) + " has a non-positive weight");
    for (const auto& name : paths[i]) {
      auto [it, added] = ids.try_emplace(name, static_cast<PhysId>(c.names.size()));
      if (added) c.names.push_back(name);
      record.nodes.push_back(it->second);
    }
    c.paths.push_back(std::move(record));
  }
  if (c.paths.empty()) throw Error(ErrorKind::EmptyCorpus, "no paths");
  return c;
}

py::dict module_node_dict(const StateNetwork& net, const ModuleNode& m) {
  py::dict d;
  d["flow"] = m.flow;
  d["exit_flow"] = m.exit_flow;
  d["enter_flow"] = m.enter_flow;
  py::list physical;
  for (const auto& pf : m.physical_flows) physical.append(py::make_tuple(net.physical_names()[pf.physical], pf.flow));
  d["physical_flows"] = physical;
  d["states"] = m.states;
  py::list children;
  for (const auto& c : m.children) children.append(module_node_dict(net, c));
  d["children"] = children;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse memory networks: state lumping, map equation clustering and cross-validated model size";

  static py::exception<Error> error(m, "FlowlumpError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  py::class_<PathCorpus>(m, "PathCorpus")
      .def_static("from_file",
                  [](const std::string& path, bool grouped) {
                    return parse_paths_file(path, ParseOptions{.grouped = grouped}).corpus;
                  },
                  py::arg("path"), py::arg("grouped") = false)
      .def_static("from_paths", &corpus_from_lists, py::arg("paths"), py::arg("weights") = py::none(),
                  "Builds a corpus from lists of node names with optional weights.")
      .def_property_readonly("names", [](const PathCorpus& c) { return c.names; })
      .def_property_readonly("num_physical", &PathCorpus::num_physical)
      .def("__len__", [](const PathCorpus& c) { return c.paths.size(); })
      .def("paths",
           [](const PathCorpus& c) {
             py::list out;
             for (const auto& p : c.paths) {
               std::vector<std::string> names;
               for (PhysId id : p.nodes) names.push_back(c.names[id]);
               out.append(py::make_tuple(names, p.weight));
             }
             return out;
           })
      .def("to_text", [](const PathCorpus& c) {
        std::ostringstream out;
        write_paths(out, c);
        return out.str();
      });

  py::class_<StateNetwork, NetworkPtr>(m, "StateNetwork")
      .def_static("build",
                  [](const PathCorpus& c, int order) {
                    py::gil_scoped_release release;
                    return std::make_shared<StateNetwork>(build_state_network(c, order));
                  },
                  py::arg("corpus"), py::arg("order") = 2)
      .def_static("from_text",
                  [](const std::string& text) {
                    std::istringstream in(text);
                    return std::make_shared<StateNetwork>(read_state_network(in));
                  })
      .def("to_text",
           [](const StateNetwork& n) {
             std::ostringstream out;
             write_state_network(out, n);
             return out.str();
           })
      .def_property_readonly("order", &StateNetwork::order)
      .def_property_readonly("num_states", &StateNetwork::num_states)
      .def_property_readonly("num_physical", &StateNetwork::num_physical)
      .def_property_readonly("num_links", &StateNetwork::num_links)
      .def_property_readonly("physical_names", &StateNetwork::physical_names)
      .def("physical", &StateNetwork::physical, py::arg("state"))
      .def("entropy_rate", [](const StateNetwork& n) { return entropy_rate(n); }, "Conditional entropy rate in bits.")
      .def("visit_rates", &rates_of, py::arg("stationary") = false);

  py::class_<SparseModel>(m, "SparseModel")
      .def_readonly("r", &SparseModel::r)
      .def_readonly("partition", &SparseModel::partition)
      .def_readonly("entropy_rate_bits", &SparseModel::entropy_rate_bits)
      .def_property_readonly("network", [](const SparseModel& s) { return std::make_shared<StateNetwork>(s.network); });

  py::class_<Dendrograms>(m, "Dendrograms")
      .def(py::init([](NetworkPtr net, std::size_t threads) {
             py::gil_scoped_release release;
             return Dendrograms{net, build_dendrograms(*net, LumpOptions{}, pool_for(threads))};
           }),
           py::arg("network"), py::arg("threads") = 1)
      .def_property_readonly("min_states", [](const Dendrograms& d) { return d.trees.size(); })
      .def_property_readonly("max_states", [](const Dendrograms& d) { return d.original->num_states(); })
      .def("expand",
           [](const Dendrograms& d, std::size_t r) {
             py::gil_scoped_release release;
             return expand_model(d.trees, d.original, r);
           },
           py::arg("r"))
      .def("unlumping_sequence",
           [](const Dendrograms& d) {
             std::vector<std::string> names;
             for (PhysId p : unlumping_sequence(d.trees)) names.push_back(d.original->physical_names()[p]);
             return names;
           })
      .def("allocation",
           [](const Dendrograms& d, const std::vector<std::size_t>& schedule) {
             py::list out;
             for (const auto& row : state_allocation(d.trees, schedule))
               out.append(py::make_tuple(row.r, d.original->physical_names()[row.physical], row.states));
             return out;
           },
           py::arg("schedule"), "Rows of (r, physical name, state count).")
      .def("to_text", [](const Dendrograms& d) {
        std::ostringstream out;
        write_dendrograms(out, d.trees);
        return out.str();
      });

  py::class_<ModuleMap>(m, "ModuleMap")
      .def_readonly("assignment", &ModuleMap::assignment)
      .def_readonly("state_flow", &ModuleMap::state_flow)
      .def_readonly("codelength", &ModuleMap::codelength_bits)
      .def_readonly("one_module_codelength", &ModuleMap::one_module_codelength_bits)
      .def_readonly("hierarchical_codelength", &ModuleMap::hierarchical_codelength_bits)
      .def_readonly("depth", &ModuleMap::depth)
      .def_property_readonly("num_modules", [](const ModuleMap& map) { return map.modules.size(); })
      .def("modules",
           [](const ModuleMap& map, const StateNetwork& net) {
             py::list out;
             for (const auto& node : map.modules) out.append(module_node_dict(net, node));
             return out;
           },
           py::arg("network"), "Module tree as nested dicts.");

  m.def(
      "optimize",
      [](const StateNetwork& net, std::size_t trials, std::uint64_t seed, bool stationary, bool nested) {
        py::gil_scoped_release release;
        auto rates = rates_of(net, stationary);
        FlowGraph graph = make_flow_graph(net, rates);
        OptimizeOptions o{.trials = trials, .seed = seed};
        ModuleMap map = optimize(graph, o);
        if (nested) map = hierarchical(graph, map, HierarchyOptions{.optimize = o});
        return map;
      },
      py::arg("network"), py::arg("trials") = 10, py::arg("seed") = 123, py::arg("stationary") = false,
      py::arg("hierarchical") = false);

  m.def(
      "codelength",
      [](const StateNetwork& net, const std::vector<ModuleId>& assignment, bool stationary) {
        if (assignment.size() != net.num_states())
          throw Error(ErrorKind::InvalidArgument, "assignment must have one module per state");
        auto rates = rates_of(net, stationary);
        return make_module_map(make_flow_graph(net, rates), assignment).codelength_bits;
      },
      py::arg("network"), py::arg("assignment"), py::arg("stationary") = false,
      "Two-level map equation of a given partition, in bits.");

  m.def(
      "cross_validate",
      [](const PathCorpus& corpus, std::size_t k, std::uint64_t seed, int order, std::size_t trials,
         std::vector<std::size_t> schedule, bool early_stop, bool grouped, std::size_t threads) {
        SweepOptions o;
        o.k = k;
        o.seed = seed;
        o.grouped = grouped;
        o.schedule = std::move(schedule);
        o.early_stop = early_stop;
        o.train.order = order;
        o.train.optimize.trials = trials;
        CVReport report;
        {
          py::gil_scoped_release release;
          report = sweep(corpus, o, pool_for(threads));
        }
        py::dict d;
        d["selected_r"] = report.selected_r;
        d["num_physical"] = report.num_physical;
        d["num_states"] = report.num_states;
        py::list points;
        for (const auto& p : report.points) {
          py::dict row;
          row["r"] = p.r;
          row["valid_folds"] = p.valid_folds;
          row["median_train"] = p.median_train_bits;
          row["median_valid"] = p.median_valid_bits;
          points.append(row);
        }
        d["points"] = points;
        d["warnings"] = report.warnings;
        std::ostringstream text;
        write_cv_report(text, report);
        d["text"] = text.str();
        return d;
      },
      py::arg("corpus"), py::arg("k") = 10, py::arg("seed") = 7, py::arg("order") = 2, py::arg("trials") = 3,
      py::arg("schedule") = std::vector<std::size_t>{}, py::arg("early_stop") = true, py::arg("grouped") = false,
      py::arg("threads") = 1);

  m.def(
      "flow_persistence",
      [](const StateNetwork& net, const ModuleMap& map, bool stationary) {
        auto rates = rates_of(net, stationary);
        auto report = flow_persistence(net, rates, map.assignment);
        py::dict d;
        d["overall"] = report.overall;
        d["per_module"] = report.per_module;
        d["module_flow"] = report.module_flow;
        return d;
      },
      py::arg("network"), py::arg("map"), py::arg("stationary") = false);

  m.def(
      "overlap_table",
      [](const StateNetwork& net, const ModuleMap& map, bool stationary) {
        auto rates = rates_of(net, stationary);
        py::list out;
        for (const auto& row : overlap_table(net, rates, map.assignment))
          out.append(py::make_tuple(net.physical_names()[row.physical], row.module, row.fraction));
        return out;
      },
      py::arg("network"), py::arg("map"), py::arg("stationary") = false,
      "Rows of (physical name, module, fraction of the node's flow).");

  m.def(
      "export_json",
      [](const StateNetwork& net, const ModuleMap& map, double min_module_flow) {
        std::ostringstream out;
        write_map_json(out, net, map, ExportOptions{.min_module_flow = min_module_flow});
        return out.str();
      },
      py::arg("network"), py::arg("map"), py::arg("min_module_flow") = 0.0);

  m.def(
      "synthesize",
      [](std::uint64_t seed, std::size_t physical, std::size_t modules, std::size_t hubs, double rho,
         std::size_t length, std::size_t paths, double hub_prob, double leak) {
        SynthParams p{.physical = physical, .modules = modules, .hubs = hubs, .rho = rho, .length = length,
                      .paths = paths, .hub_prob = hub_prob, .leak = leak};
        py::gil_scoped_release release;
        return synthesize(p, seed);
      },
      py::arg("seed") = 1, py::arg("physical") = 50, py::arg("modules") = 4, py::arg("hubs") = 4,
      py::arg("rho") = 0.9, py::arg("length") = 3, py::arg("paths") = 100000, py::arg("hub_prob") = 0.25,
      py::arg("leak") = 0.05, "Planted-memory corpus: modules joined by hubs that return with probability rho.");
}
