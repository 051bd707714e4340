#pragma once

#include <string>
#include <vector>

#include "relmatch/autodiff.hpp"
#include "relmatch/scene_graph.hpp"

namespace relmatch {

// One primitive-module application. Inputs and outputs are recorded as plain
// values so the step can be re-executed and checked in isolation.
struct TraceStep {
  std::string module;  // Sim | GateSum | Select | Aggregate | GateProd | Classify |
                       // Locate | Compare | And
  int node = -1;       // entity index, when applicable
  int relation = -1;   // relation index, when applicable
  std::string direction;  // "bp", "td" or ""
  std::string detail;     // similarity kind or gate parameter name
  std::vector<ad::Mat> inputs;
  std::vector<std::vector<int>> index_sets;  // id maps for belief-valued inputs
  ad::Mat output;
};

struct ProgramTrace {
  std::vector<TraceStep> steps;

  void add(TraceStep step) { steps.push_back(std::move(step)); }
};

inline ordered_json matrix_to_json(const ad::Mat& m) {
  ordered_json rows = ordered_json::array();
  for (long i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ordered_json trace_to_json(const ProgramTrace& trace, bool include_values) {
  ordered_json steps = ordered_json::array();
  for (const auto& s : trace.steps) {
    ordered_json j;
    j["module"] = s.module;
    if (s.node >= 0) j["node"] = s.node;
    if (s.relation >= 0) j["relation"] = s.relation;
    if (!s.direction.empty()) j["direction"] = s.direction;
    if (!s.detail.empty()) j["detail"] = s.detail;
    ordered_json shapes = ordered_json::array();
    for (const auto& m : s.inputs) shapes.push_back({m.rows(), m.cols()});
    j["input_shapes"] = shapes;
    if (!s.index_sets.empty()) j["index_sets"] = s.index_sets;
    if (include_values) {
      ordered_json vals = ordered_json::array();
      for (const auto& m : s.inputs) vals.push_back(matrix_to_json(m));
      j["inputs"] = vals;
    }
    j["output"] = matrix_to_json(s.output);
    steps.push_back(std::move(j));
  }
  return steps;
}

}  // namespace relmatch
