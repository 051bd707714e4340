#pragma once

#include <cmath>
#include <string>

#include "relmatch/belief.hpp"
#include "relmatch/model.hpp"
#include "relmatch/trace.hpp"

namespace relmatch {

struct ReplayResult {
  bool ok = true;
  int checked = 0;
  double max_diff = 0.0;
  std::string first_mismatch;
};

// Re-executes every traced module on its recorded inputs and compares against
// the recorded outputs. A trace replays exactly when the modules are pure.
inline ReplayResult replay_trace(const ProgramTrace& trace, const Model& m,
                                 double tol = 1e-12) {
  ReplayResult res;

  auto compare = [&](const TraceStep& step, const ad::Mat& got) {
    ++res.checked;
    const double diff = (got - step.output).cwiseAbs().maxCoeff();
    res.max_diff = std::max(res.max_diff, diff);
    if (diff > tol && res.ok) {
      res.ok = false;
      res.first_mismatch = step.module + "/" + step.detail;
    }
  };

  for (const auto& step : trace.steps) {
    ad::Tape t;
    if (step.module == "Sim") {
      Var x = t.constant(step.inputs[0]);
      Var y = t.constant(step.inputs[1]);
      Var out;
      if (step.detail == "app")
        out = belief::sim_ent(t, m.sim_app, x, y, m.cfg.eps);
      else if (step.detail == "pos")
        out = belief::sim_ent(t, m.sim_pos, x, y, m.cfg.eps);
      else
        out = belief::sim_rel(t, m.sim_rel, x, y, m.cfg.eps);
      compare(step, out.val());
    } else if (step.module == "GateSum") {
      Var g = t.constant(step.inputs[0]);
      belief::BeliefVar b_app{t.constant(step.inputs[1]), step.index_sets[0]};
      belief::BeliefVar b_pos{t.constant(step.inputs[2]), step.index_sets[0]};
      auto out = belief::gate_sum(t, g, {{m.gate_app, b_app}, {m.gate_pos, b_pos}});
      compare(step, out.values.val());
    } else if (step.module == "Select") {
      belief::BeliefVar b{t.constant(step.inputs[0]), step.index_sets[0]};
      auto out = belief::select_topk(b, static_cast<int>(step.output.rows()));
      if (out.ids != step.index_sets[1] && res.ok) {
        res.ok = false;
        res.first_mismatch = "Select ids";
      }
      compare(step, out.values.val());
    } else if (step.module == "Aggregate" && step.detail == "message") {
      Var A = t.constant(step.inputs[0]);
      Var b = t.constant(step.inputs[1]);
      Var out = step.direction == "bp" ? ad::matmul(A, b) : ad::matmul_tA(A, b);
      compare(step, out.val());
    } else if (step.module == "Aggregate") {
      Var acc;
      for (const auto& msg : step.inputs) {
        Var lg = ad::log_floor(t.constant(msg), m.cfg.eps);
        acc = acc.valid() ? ad::add(acc, lg) : lg;
      }
      compare(step, ad::exp_(acc).val());
    } else if (step.module == "GateProd") {
      belief::BeliefVar loc{t.constant(step.inputs[0]), step.index_sets[0]};
      belief::BeliefVar agg{t.constant(step.inputs[1]), step.index_sets[0]};
      Var g = t.constant(step.inputs[2]);
      std::optional<double> override;
      ad::Param* w = nullptr;
      if (step.detail == "override")
        override = step.inputs[3](0, 0);
      else
        w = const_cast<ad::ParamStore&>(m.params).find(step.detail);
      ad::Param dummy("dummy", ad::Mat::Zero(step.inputs[2].rows(), 1), 0);
      auto out = belief::gate_prod(t, loc, agg, g, w ? *w : dummy, m.cfg.eps, override);
      compare(step, out.values.val());
    } else if (step.module == "Classify") {
      belief::BeliefVar b{t.constant(step.inputs[0]), step.index_sets[0]};
      compare(step, belief::classify(t, b, m.cfg.K, m.classify_mlp).val());
    } else if (step.module == "And") {
      ad::Mat out(1, 1);
      out(0, 0) = step.inputs[0].minCoeff();
      compare(step, out);
    } else if (step.module == "Compare") {
      ad::Mat out(1, 1);
      out(0, 0) = (step.inputs[0](0, 0) - step.inputs[0](1, 0)) +
                  (step.inputs[0](3, 0) - step.inputs[0](2, 0));
      compare(step, out);
    } else if (step.module == "Locate" && !step.inputs.empty()) {
      const auto& vals = step.inputs[0];
      const auto& ids = step.index_sets[0];
      int best = 0;
      for (int i = 1; i < static_cast<int>(ids.size()); ++i)
        if (vals(i, 0) > vals(best, 0)) best = i;
      ad::Mat out(1, 1);
      out(0, 0) = ids[static_cast<std::size_t>(best)];
      compare(step, out);
    }
  }
  return res;
}

}  // namespace relmatch
