#pragma once

#include <iosfwd>
#include <string>

#include "flowlump/corpus.hpp"
#include "flowlump/mapeq.hpp"

namespace flowlump {

struct ExportOptions {
  // Modules carrying less than this share of the total flow are left out of
  // the `modules` list (their flow still counts in the totals). 0 keeps all.
  double min_module_flow = 0.0;
  int indent = 2;
};

// Writes a map as JSON (see schema/flowlump-map.schema.json): nested modules
// with aggregated physical flows and, at the top level, the flow on links
// between modules.
void write_map_json(std::ostream& out, const StateNetwork& net, const ModuleMap& map,
                    const ExportOptions& options = {});

}  // namespace flowlump
