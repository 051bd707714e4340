#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "relmatch/belief.hpp"
#include "relmatch/features.hpp"
#include "relmatch/trace.hpp"

namespace relmatch {

enum class Direction { BottomUp, TopDown };
enum class Task { Grounding, Matching };

inline const char* to_string(Direction d) {
  return d == Direction::BottomUp ? "bp" : "td";
}

struct PropagationConfig {
  Task task = Task::Matching;
  int K = 5;
  double eps = 1e-8;
  // Test/ablation hook: pins every relation gate to a constant, bypassing W_rel.
  std::optional<double> beta_rel_override;
};

struct RunOptions {
  // When set, gate inputs are taken from this bank instead of being computed;
  // finite-difference checks use it to hold the gated path fixed.
  const std::vector<Eigen::VectorXd>* frozen_gate_inputs = nullptr;
  std::vector<Eigen::VectorXd>* record_gate_inputs = nullptr;
  std::optional<double> beta_rel_override;
  ProgramTrace* trace = nullptr;
};

// Per-node ingredients of the propagation: the local belief over all
// proposals, the raw similarity vectors, and the (gradient-stopped) gate input.
struct NodeInputs {
  belief::BeliefVar local;
  Var b_app;
  Var b_pos;
  Var gate_input;
};

// rows ids on the subject (parent) side, column ids on the object (child) side
using AlignmentFn =
    std::function<Var(int relation_index, const std::vector<int>& subject_ids,
                      const std::vector<int>& object_ids, ProgramTrace* trace)>;

struct BeliefInputs {
  std::vector<NodeInputs> nodes;
  AlignmentFn alignment;
};

// Leaves-first for the bottom-up pass, root-first for top-down.
inline std::vector<int> propagation_order(const TreeIndex& tree, Direction d) {
  std::vector<int> order = tree.bfs_order;
  if (d == Direction::BottomUp) std::reverse(order.begin(), order.end());
  return order;
}

// Eq-level parameters of one propagate invocation.
struct PropagationParams {
  ad::Param* w_rel_bp = nullptr;
  ad::Param* w_rel_td = nullptr;       // matching only
  const nn::Mlp* classify = nullptr;   // matching only
};

struct DirectionVars {
  std::vector<belief::BeliefVar> beliefs;
  std::vector<Var> confidences;  // empty for the grounding task
};

struct PropagationResult {
  Task task = Task::Matching;
  // live handles (per entity index)
  std::vector<belief::BeliefVar> local_vars;
  std::map<Direction, DirectionVars> dir_vars;
  // snapshots
  std::vector<belief::Belief> local;
  std::map<Direction, std::vector<belief::Belief>> beliefs;
  std::map<Direction, std::vector<double>> confidences;

  const belief::BeliefVar& root_belief(const TreeIndex& tree) const {
    return dir_vars.at(Direction::BottomUp).beliefs[static_cast<std::size_t>(tree.root)];
  }
};

// ---------------------------------------------------------------------------
// Local beliefs (message initialization) from candidate features.
// ---------------------------------------------------------------------------

inline BeliefInputs build_belief_inputs(Tape& t, const Model& m, CandidateFeatures& f,
                                        const RunOptions& opts = {}) {
  BeliefInputs inputs;
  const int n_e = static_cast<int>(f.graph->entities.size());
  const int n_o = f.scene->proposal_count();
  if (n_o > m.cfg.max_proposals) throw Error("scene exceeds max_proposals");

  std::vector<int> all_ids(static_cast<std::size_t>(n_o));
  for (int j = 0; j < n_o; ++j) all_ids[static_cast<std::size_t>(j)] = j;

  for (int i = 0; i < n_e; ++i) {
    NodeInputs node;
    std::vector<Var> app_entries, pos_entries;
    for (int j = 0; j < n_o; ++j) {
      Var a = belief::sim_ent_pre(t, m.sim_app, f.trf_app_entity(i), f.trf_app_object(j),
                                  m.cfg.eps);
      Var p = belief::sim_ent_pre(t, m.sim_pos, f.trf_pos_entity(i), f.trf_pos_object(j),
                                  m.cfg.eps);
      if (opts.trace) {
        opts.trace->add({"Sim", i, -1, "", "app",
                         {f.ent_app[static_cast<std::size_t>(i)].val(),
                          f.obj[static_cast<std::size_t>(j)].val()},
                         {{j}},
                         a.val()});
        opts.trace->add({"Sim", i, -1, "", "pos",
                         {f.ent_loc[static_cast<std::size_t>(i)].val(),
                          f.obj_loc[static_cast<std::size_t>(j)].val()},
                         {{j}},
                         p.val()});
      }
      app_entries.push_back(a);
      pos_entries.push_back(p);
    }
    node.b_app = ad::from_entries(t, n_o, 1, app_entries);
    node.b_pos = ad::from_entries(t, n_o, 1, pos_entries);

    if (opts.frozen_gate_inputs) {
      node.gate_input =
          t.constant((*opts.frozen_gate_inputs)[static_cast<std::size_t>(i)]);
    } else {
      Var g = ad::concat_rows({f.ent_h[static_cast<std::size_t>(i)], node.b_app, node.b_pos,
                               t.zeros(2 * (m.cfg.max_proposals - n_o))});
      // Gradients never flow into the gate inputs; the gates only modulate.
      node.gate_input = ad::stop_gradient(g);
    }
    if (opts.record_gate_inputs)
      opts.record_gate_inputs->push_back(node.gate_input.val().col(0));

    belief::BeliefVar b_app{node.b_app, all_ids};
    belief::BeliefVar b_pos{node.b_pos, all_ids};
    node.local = belief::gate_sum(t, node.gate_input,
                                  {{m.gate_app, b_app}, {m.gate_pos, b_pos}});
    if (opts.trace)
      opts.trace->add({"GateSum", i, -1, "", "gate.app|gate.pos",
                       {node.gate_input.val(), node.b_app.val(), node.b_pos.val()},
                       {all_ids},
                       node.local.values.val()});
    inputs.nodes.push_back(std::move(node));
  }

  inputs.alignment = [&t, &m, &f](int rel, const std::vector<int>& subject_ids,
                                  const std::vector<int>& object_ids,
                                  ProgramTrace* trace) -> Var {
    std::vector<Var> entries;
    entries.reserve(subject_ids.size() * object_ids.size());
    Var lang = f.trf_rel_language(rel);
    for (int k : subject_ids)
      for (int l : object_ids) {
        Var s = belief::sim_rel_pre(t, lang, f.trf_rel_visual(k, l));
        if (trace)
          trace->add({"Sim", -1, rel, "", "rel",
                      {f.rel_spo[static_cast<std::size_t>(rel)].val(),
                       f.visual_relation_raw(k, l).val()},
                      {{k, l}},
                      s.val()});
        entries.push_back(s);
      }
    return ad::from_entries(t, static_cast<long>(subject_ids.size()),
                            static_cast<long>(object_ids.size()), entries);
  };
  return inputs;
}

// ---------------------------------------------------------------------------
// Bi-directional message propagation.
// ---------------------------------------------------------------------------

inline PropagationResult propagate(Tape& t, const TreeIndex& tree, BeliefInputs& inputs,
                                   const PropagationParams& params,
                                   const PropagationConfig& config,
                                   ProgramTrace* trace = nullptr) {
  const int n = static_cast<int>(inputs.nodes.size());
  PropagationResult result;
  result.task = config.task;

  // The matching pass restricts each node to its own top-K local indices;
  // grounding keeps the full index set everywhere.
  std::vector<belief::BeliefVar> base(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& local = inputs.nodes[static_cast<std::size_t>(i)].local;
    if (config.task == Task::Matching) {
      base[static_cast<std::size_t>(i)] = belief::select_topk(local, config.K);
      if (trace)
        trace->add({"Select", i, -1, "", "own",
                    {local.values.val()},
                    {local.ids, base[static_cast<std::size_t>(i)].ids},
                    base[static_cast<std::size_t>(i)].values.val()});
    } else {
      base[static_cast<std::size_t>(i)] = local;
    }
    result.local_vars.push_back(local);
    result.local.push_back(local.snapshot());
  }

  std::vector<Direction> directions = {Direction::BottomUp};
  if (config.task == Task::Matching) directions.push_back(Direction::TopDown);

  for (Direction dir : directions) {
    DirectionVars out;
    out.beliefs.resize(static_cast<std::size_t>(n));
    const auto order = propagation_order(tree, dir);
    ad::Param* w_rel = dir == Direction::BottomUp ? params.w_rel_bp : params.w_rel_td;

    for (int idx : order) {
      const auto& node = inputs.nodes[static_cast<std::size_t>(idx)];
      std::vector<int> upstream;
      std::vector<int> upstream_rel;
      if (dir == Direction::BottomUp) {
        upstream = tree.children[static_cast<std::size_t>(idx)];
        upstream_rel = tree.child_relations[static_cast<std::size_t>(idx)];
      } else if (tree.parent[static_cast<std::size_t>(idx)] >= 0) {
        upstream = {tree.parent[static_cast<std::size_t>(idx)]};
        upstream_rel = {tree.parent_relation[static_cast<std::size_t>(idx)]};
      }

      belief::BeliefVar updated;
      if (upstream.empty()) {
        updated = base[static_cast<std::size_t>(idx)];
      } else {
        const auto& own_ids = base[static_cast<std::size_t>(idx)].ids;
        std::vector<Var> messages;
        for (std::size_t u = 0; u < upstream.size(); ++u) {
          const auto& up_belief = out.beliefs[static_cast<std::size_t>(upstream[u])];
          auto sel = belief::select_topk(up_belief, config.K);
          if (trace)
            trace->add({"Select", upstream[u], upstream_rel[u], to_string(dir), "upstream",
                        {up_belief.values.val()},
                        {up_belief.ids, sel.ids},
                        sel.values.val()});
          Var A, msg;
          if (dir == Direction::BottomUp) {
            A = inputs.alignment(upstream_rel[u], own_ids, sel.ids, trace);
            msg = ad::matmul(A, sel.values);
          } else {
            A = inputs.alignment(upstream_rel[u], sel.ids, own_ids, trace);
            msg = ad::matmul_tA(A, sel.values);
          }
          if (trace)
            trace->add({"Aggregate", idx, upstream_rel[u], to_string(dir), "message",
                        {A.val(), sel.values.val()},
                        {own_ids, sel.ids},
                        msg.val()});
          messages.push_back(msg);
        }
        auto agg = belief::aggregate_messages(t, messages, own_ids, config.eps);
        if (trace) {
          std::vector<ad::Mat> ins;
          for (const auto& msg : messages) ins.push_back(msg.val());
          trace->add({"Aggregate", idx, -1, to_string(dir), "product", ins, {own_ids},
                      agg.values.val()});
        }
        updated = belief::gate_prod(t, base[static_cast<std::size_t>(idx)], agg,
                                    node.gate_input, *w_rel, config.eps,
                                    config.beta_rel_override);
        if (trace) {
          std::vector<ad::Mat> ins = {base[static_cast<std::size_t>(idx)].values.val(),
                                      agg.values.val(), node.gate_input.val()};
          if (config.beta_rel_override) {
            ad::Mat b(1, 1);
            b(0, 0) = *config.beta_rel_override;
            ins.push_back(b);
          }
          trace->add({"GateProd", idx, -1, to_string(dir),
                      config.beta_rel_override ? "override" : w_rel->name, std::move(ins),
                      {updated.ids}, updated.values.val()});
        }
      }
      out.beliefs[static_cast<std::size_t>(idx)] = updated;
    }

    if (config.task == Task::Matching) {
      out.confidences.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        Var p = belief::classify(t, out.beliefs[static_cast<std::size_t>(i)], config.K,
                                 *params.classify);
        if (trace)
          trace->add({"Classify", i, -1, to_string(dir), "head.match",
                      {out.beliefs[static_cast<std::size_t>(i)].values.val()},
                      {out.beliefs[static_cast<std::size_t>(i)].ids},
                      p.val()});
        out.confidences[static_cast<std::size_t>(i)] = p;
      }
    }

    auto& snap_b = result.beliefs[dir];
    for (int i = 0; i < n; ++i)
      snap_b.push_back(out.beliefs[static_cast<std::size_t>(i)].snapshot());
    if (config.task == Task::Matching) {
      auto& snap_c = result.confidences[dir];
      for (int i = 0; i < n; ++i)
        snap_c.push_back(out.confidences[static_cast<std::size_t>(i)].scalar());
    }
    result.dir_vars[dir] = std::move(out);
  }
  return result;
}

}  // namespace relmatch
