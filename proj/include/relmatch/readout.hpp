#pragma once

#include <memory>
#include <optional>
#include <string>

#include "relmatch/propagate.hpp"

namespace relmatch {

// ---------------------------------------------------------------------------
// Forward orchestration: features -> local beliefs -> propagation passes.
// ---------------------------------------------------------------------------

struct ForwardRequest {
  bool matching = true;
  bool grounding = true;
  RunOptions opts;
};

struct SampleForward {
  Tape* tape = nullptr;
  const Model* model = nullptr;
  const Sample* sample = nullptr;
  TreeIndex tree;
  std::unique_ptr<CandidateFeatures> features;
  BeliefInputs inputs;
  std::optional<PropagationResult> grounding;
  std::optional<PropagationResult> matching;
  Var p_match;  // set when the matching pass ran
};

// Minimum over all per-node, per-direction confidences; the gradient flows to
// the attaining confidence only.
inline Var itm_score_var(const PropagationResult& r, ProgramTrace* trace = nullptr) {
  const auto& bp = r.dir_vars.at(Direction::BottomUp).confidences;
  const auto& td = r.dir_vars.at(Direction::TopDown).confidences;
  std::vector<Var> all;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    all.push_back(bp[i]);
    all.push_back(td[i]);
  }
  Var out = ad::min_of(all);
  if (trace) {
    ad::Mat ins(static_cast<long>(all.size()), 1);
    for (std::size_t i = 0; i < all.size(); ++i) ins(static_cast<long>(i), 0) = all[i].scalar();
    trace->add({"And", -1, -1, "", "min over node confidences", {ins}, {}, out.val()});
  }
  return out;
}

inline double itm_score(const PropagationResult& r) {
  double best = 1.0;
  for (const auto& [dir, confs] : r.confidences)
    for (double p : confs) best = std::min(best, p);
  return best;
}

// Referent choice: largest root belief from the bottom-up pass, ties toward
// the lower proposal id. Returns the proposal id from the belief's index map.
inline int ground_referent(const PropagationResult& r, const TreeIndex& tree,
                           ProgramTrace* trace = nullptr) {
  const auto& root =
      r.beliefs.at(Direction::BottomUp)[static_cast<std::size_t>(tree.root)];
  int best = 0;
  for (int i = 1; i < static_cast<int>(root.ids.size()); ++i) {
    const bool better = root.values(i) > root.values(best) ||
                        (root.values(i) == root.values(best) && root.ids[i] < root.ids[best]);
    if (better) best = i;
  }
  if (trace) {
    ad::Mat out(1, 1);
    out(0, 0) = root.ids[static_cast<std::size_t>(best)];
    trace->add({"Locate", tree.root, -1, "bp", "argmax root belief",
                {root.values}, {root.ids}, out});
  }
  return root.ids[static_cast<std::size_t>(best)];
}

// ---------------------------------------------------------------------------
// Box refinement head.
// ---------------------------------------------------------------------------

struct Refinement {
  Box box;
  Eigen::Vector4d delta;
  Var delta_var;
};

// Global expression feature for regression: mean of the SPO representations,
// or the root entity appearance feature when the graph has no relations.
inline Var global_language_feature(Tape& t, const SampleForward& fw) {
  const auto& spo = fw.features->rel_spo;
  if (spo.empty()) return fw.features->ent_app[static_cast<std::size_t>(fw.tree.root)];
  Var acc = spo[0];
  for (std::size_t i = 1; i < spo.size(); ++i) acc = ad::add(acc, spo[i]);
  return ad::affine(acc, 1.0 / static_cast<double>(spo.size()), 0.0);
}

inline Refinement refine_box(SampleForward& fw, int proposal_index) {
  Tape& t = *fw.tape;
  const Model& m = *fw.model;
  const auto& prop = fw.sample->scene.proposals[static_cast<std::size_t>(proposal_index)];
  Var in = ad::concat_rows({fw.features->obj[static_cast<std::size_t>(proposal_index)],
                            fw.features->obj_loc[static_cast<std::size_t>(proposal_index)],
                            global_language_feature(t, fw)});
  Refinement r;
  r.delta_var = m.regress_mlp(t, in);
  r.delta = r.delta_var.val().col(0);
  r.box = clamp01(Box{prop.box.x + r.delta(0), prop.box.y + r.delta(1),
                      prop.box.w + r.delta(2), prop.box.h + r.delta(3)});
  return r;
}

// ---------------------------------------------------------------------------
// Mismatched relation selection: the edge with the largest confidence drop,
// summing both directions. Most negative score wins; ties prefer the lower
// relation id.
// ---------------------------------------------------------------------------

inline int mismatched_relation(const LanguageSceneGraph& g, const TreeIndex& tree,
                               const std::vector<double>& p_bp,
                               const std::vector<double>& p_td,
                               ProgramTrace* trace = nullptr) {
  if (g.relations.empty()) throw NoRelations("mismatched_relation: graph has no relations");
  int best_id = -1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < g.relations.size(); ++r) {
    const auto& rel = g.relations[r];
    const int pi = tree.index_of_id.at(rel.subject);
    const int ci = tree.index_of_id.at(rel.object);
    const double d = (p_bp[static_cast<std::size_t>(pi)] - p_bp[static_cast<std::size_t>(ci)]) +
                     (p_td[static_cast<std::size_t>(ci)] - p_td[static_cast<std::size_t>(pi)]);
    if (trace) {
      ad::Mat ins(4, 1);
      ins << p_bp[static_cast<std::size_t>(pi)], p_bp[static_cast<std::size_t>(ci)],
          p_td[static_cast<std::size_t>(pi)], p_td[static_cast<std::size_t>(ci)];
      ad::Mat out(1, 1);
      out(0, 0) = d;
      trace->add({"Compare", -1, static_cast<int>(r), "", "confidence drop", {ins}, {}, out});
    }
    if (d < best || (d == best && rel.id < best_id)) {
      best = d;
      best_id = rel.id;
    }
  }
  if (trace) {
    ad::Mat out(1, 1);
    out(0, 0) = best_id;
    trace->add({"Locate", -1, best_id, "", "argmin edge score", {}, {}, out});
  }
  return best_id;
}

inline int mismatched_relation(const PropagationResult& r, const LanguageSceneGraph& g,
                               const TreeIndex& tree, ProgramTrace* trace = nullptr) {
  return mismatched_relation(g, tree, r.confidences.at(Direction::BottomUp),
                             r.confidences.at(Direction::TopDown), trace);
}

// ---------------------------------------------------------------------------
// Full forward + joint/oracle prediction.
// ---------------------------------------------------------------------------

inline SampleForward run_forward(Tape& t, const Model& m, const TokenEncoder& encoder,
                                 const Sample& s, const ForwardRequest& req = {}) {
  SampleForward fw;
  fw.tape = &t;
  fw.model = &m;
  fw.sample = &s;
  fw.tree = TreeIndex::build(s.graph);
  // Belief index maps carry proposal ids; scenes are canonical, id == position.
  for (std::size_t i = 0; i < s.scene.proposals.size(); ++i)
    if (s.scene.proposals[i].id != static_cast<int>(i))
      throw Error("run_forward: proposals must be indexed 0..N-1");
  TokenEncoding enc = encode_tokens(t, m, s, encoder);
  fw.features = std::make_unique<CandidateFeatures>(build_candidate_features(t, m, s, enc));
  fw.inputs = build_belief_inputs(t, m, *fw.features, req.opts);

  if (req.grounding) {
    PropagationConfig cfg;
    cfg.task = Task::Grounding;
    cfg.K = m.cfg.K;
    cfg.eps = m.cfg.eps;
    cfg.beta_rel_override = req.opts.beta_rel_override;
    PropagationParams params;
    params.w_rel_bp = m.gate_rel_grounding_bp;
    fw.grounding = propagate(t, fw.tree, fw.inputs, params, cfg, req.opts.trace);
  }
  if (req.matching) {
    PropagationConfig cfg;
    cfg.task = Task::Matching;
    cfg.K = m.cfg.K;
    cfg.eps = m.cfg.eps;
    cfg.beta_rel_override = req.opts.beta_rel_override;
    PropagationParams params;
    params.w_rel_bp = m.gate_rel_matching_bp;
    params.w_rel_td = m.gate_rel_matching_td;
    params.classify = &m.classify_mlp;
    fw.matching = propagate(t, fw.tree, fw.inputs, params, cfg, req.opts.trace);
    fw.p_match = itm_score_var(*fw.matching, req.opts.trace);
  }
  return fw;
}

enum class PredictMode { Joint, Oracle };

struct Prediction {
  double match_prob = 0.0;
  bool match = false;
  int grounded_id = -1;
  std::optional<Box> box;
  int mismatched_relation_id = -1;
  std::string mode = "joint";
};

inline ordered_json to_json(const Prediction& p) {
  ordered_json j;
  j["match_prob"] = p.match_prob;
  j["match"] = p.match;
  if (p.grounded_id >= 0) j["grounded_id"] = p.grounded_id;
  if (p.box) j["box"] = to_json(*p.box);
  if (p.mismatched_relation_id >= 0) j["mismatched_relation_id"] = p.mismatched_relation_id;
  j["mode"] = p.mode;
  return j;
}

inline Prediction predict(const Model& m, const TokenEncoder& encoder, const Sample& s,
                          PredictMode mode, const RunOptions& opts = {}) {
  Tape t;
  Prediction out;
  out.mode = mode == PredictMode::Joint ? "joint" : "oracle";

  ForwardRequest req;
  req.matching = true;
  req.opts = opts;
  req.grounding = false;
  SampleForward fw = run_forward(t, m, encoder, s, req);
  out.match_prob = fw.p_match.scalar();
  out.match = out.match_prob >= 0.5;

  const bool want_grounding = mode == PredictMode::Oracle || out.match;
  const bool want_mrr =
      (mode == PredictMode::Oracle && !s.graph.relations.empty()) ||
      (mode == PredictMode::Joint && !out.match);

  if (want_grounding) {
    ForwardRequest greq;
    greq.matching = false;
    greq.grounding = true;
    greq.opts = opts;
    greq.opts.record_gate_inputs = nullptr;
    Tape tg;
    SampleForward gfw = run_forward(tg, m, encoder, s, greq);
    out.grounded_id = ground_referent(*gfw.grounding, gfw.tree, opts.trace);
    out.box = refine_box(gfw, out.grounded_id).box;
  }
  if (want_mrr)
    out.mismatched_relation_id = mismatched_relation(*fw.matching, s.graph, fw.tree, opts.trace);
  return out;
}

}  // namespace relmatch
