#pragma once

#include <map>
#include <utility>
#include <vector>

#include "relmatch/belief.hpp"
#include "relmatch/encoder.hpp"
#include "relmatch/geometry.hpp"
#include "relmatch/model.hpp"

namespace relmatch {

inline Var const_vec5(Tape& t, const std::array<double, 5>& a) {
  ad::Mat m(5, 1);
  for (int i = 0; i < 5; ++i) m(i, 0) = a[i];
  return t.constant(std::move(m));
}

// Attention pooling over a phrase: softmax of W^T h_i scores applied to the
// word vectors.
inline Var phrase_attention(Tape& t, const std::vector<Var>& words,
                            const std::vector<Var>& hiddens, ad::Param& W) {
  if (words.empty()) throw EmptyPhrase("phrase_attention: no words");
  if (words.size() != hiddens.size())
    throw DimensionMismatch("phrase_attention: words/hiddens length mismatch");
  std::vector<Var> scores;
  scores.reserve(hiddens.size());
  Var w = t.param(W);
  for (const auto& h : hiddens) scores.push_back(ad::dot(w, h));
  Var weights = ad::softmax(ad::from_entries(t, static_cast<long>(scores.size()), 1, scores));
  Var out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    Var term = ad::scale(words[i], ad::pick(weights, static_cast<long>(i)));
    out = out.valid() ? ad::add(out, term) : term;
  }
  return out;
}

// Direct relation feature of an ordered proposal pair: projected relative
// geometry next to a projected feature pair, concatenated to d dims.
inline Var visual_relation_feature(Tape& t, const Model& m, Var oi, const Box& bi, Var oj,
                                   const Box& bj) {
  Var s = const_vec5(t, relative_spatial(bi, bj));
  Var geo = ad::matmul(t.param(*m.rel_Wl), s);
  Var app = ad::matmul(t.param(*m.rel_We), ad::concat_rows({oi, oj}));
  return ad::concat_rows({geo, app});
}

// Per-sample candidate representations plus the lazy caches used by the
// similarity heads. Bound to one tape.
struct CandidateFeatures {
  Tape* tape = nullptr;
  const Model* model = nullptr;
  const LanguageSceneGraph* graph = nullptr;
  const VisualScene* scene = nullptr;

  std::vector<Var> obj;      // o_i, d
  std::vector<Var> obj_loc;  // l^o_i, 5 (constants)
  std::vector<Var> ent_app;  // e_i, d
  std::vector<Var> ent_loc;  // l^e_i, 5
  std::vector<Var> ent_h;    // h^e_i, h
  std::vector<Var> rel_spo;  // r^e_ij, d (graph.relations order)

  Var trf_app_entity(int i) { return trf(ent_trf_app_, i, model->sim_app.trf, ent_app[i]); }
  Var trf_app_object(int j) { return trf(obj_trf_app_, j, model->sim_app.trf, obj[j]); }
  Var trf_pos_entity(int i) { return trf(ent_trf_pos_, i, model->sim_pos.trf, ent_loc[i]); }
  Var trf_pos_object(int j) { return trf(obj_trf_pos_, j, model->sim_pos.trf, obj_loc[j]); }
  Var trf_rel_language(int r) { return trf(rel_trf_lang_, r, model->sim_rel.trf, rel_spo[r]); }

  // r^o_kl is only materialized for pairs that survive pruning.
  Var visual_relation_raw(int k, int l) {
    auto it = rel_vis_raw_.find({k, l});
    if (it != rel_vis_raw_.end()) return it->second;
    Var raw = visual_relation_feature(*tape, *model, obj[k], scene->proposals[k].box,
                                      obj[l], scene->proposals[l].box);
    rel_vis_raw_.emplace(std::make_pair(k, l), raw);
    return raw;
  }

  Var trf_rel_visual(int k, int l) {
    auto it = rel_trf_vis_.find({k, l});
    if (it != rel_trf_vis_.end()) return it->second;
    Var out = belief::f_trf(*tape, model->sim_rel.trf, visual_relation_raw(k, l),
                            model->cfg.eps);
    rel_trf_vis_.emplace(std::make_pair(k, l), out);
    return out;
  }

 private:
  Var trf(std::vector<Var>& cache, int i, const nn::Mlp& mlp, Var x) {
    if (cache[static_cast<std::size_t>(i)].valid()) return cache[static_cast<std::size_t>(i)];
    Var out = belief::f_trf(*tape, mlp, x, model->cfg.eps);
    cache[static_cast<std::size_t>(i)] = out;
    return out;
  }

  std::vector<Var> ent_trf_app_, ent_trf_pos_, obj_trf_app_, obj_trf_pos_, rel_trf_lang_;
  std::map<std::pair<int, int>, Var> rel_trf_vis_;
  std::map<std::pair<int, int>, Var> rel_vis_raw_;

  friend CandidateFeatures build_candidate_features(Tape&, const Model&, const Sample&,
                                                    const TokenEncoding&);
};

// Runs the shared phrase encoder over every entity phrase and every
// subject-predicate-object phrase, and wires up the visual side.
inline CandidateFeatures build_candidate_features(Tape& t, const Model& m, const Sample& s,
                                                  const TokenEncoding& enc) {
  const auto& g = s.graph;
  if (validate_tree(g) != TreeCheck::Ok)
    throw Error("build_candidate_features: graph is not a valid tree");

  CandidateFeatures f;
  f.tape = &t;
  f.model = &m;
  f.graph = &g;
  f.scene = &s.scene;

  // Token offsets into the canonical stream: entities first, then relations.
  std::vector<int> ent_off(g.entities.size());
  std::vector<int> rel_off(g.relations.size());
  int off = 0;
  for (std::size_t i = 0; i < g.entities.size(); ++i) {
    ent_off[i] = off;
    off += static_cast<int>(g.entities[i].words.size());
  }
  for (std::size_t r = 0; r < g.relations.size(); ++r) {
    rel_off[r] = off;
    off += static_cast<int>(g.relations[r].words.size());
  }

  auto words_of = [&](int start, int count) {
    std::vector<Var> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) out.push_back(enc.words[static_cast<std::size_t>(start + k)]);
    return out;
  };

  for (std::size_t i = 0; i < g.entities.size(); ++i) {
    const auto& e = g.entities[i];
    if (e.words.empty()) throw EmptyPhrase("entity " + std::to_string(e.id) + " has no words");
    auto xs = words_of(ent_off[i], static_cast<int>(e.words.size()));
    auto run = m.lstm.run(t, xs);
    f.ent_h.push_back(run.final);
    f.ent_app.push_back(phrase_attention(t, xs, run.states, *m.attn_app));
    f.ent_loc.push_back(m.le_proj(t, phrase_attention(t, xs, run.states, *m.attn_pos)));
  }

  std::map<int, std::size_t> ent_index;
  for (std::size_t i = 0; i < g.entities.size(); ++i) ent_index[g.entities[i].id] = i;

  for (std::size_t r = 0; r < g.relations.size(); ++r) {
    const auto& rel = g.relations[r];
    const std::size_t si = ent_index.at(rel.subject);
    const std::size_t oi = ent_index.at(rel.object);
    std::vector<Var> xs = words_of(ent_off[si], static_cast<int>(g.entities[si].words.size()));
    auto mid = words_of(rel_off[r], static_cast<int>(rel.words.size()));
    auto tail = words_of(ent_off[oi], static_cast<int>(g.entities[oi].words.size()));
    xs.insert(xs.end(), mid.begin(), mid.end());
    xs.insert(xs.end(), tail.begin(), tail.end());
    if (xs.empty()) throw EmptyPhrase("relation " + std::to_string(rel.id) + " has no words");
    auto run = m.lstm.run(t, xs);
    f.rel_spo.push_back(phrase_attention(t, xs, run.states, *m.attn_spo));
  }

  for (const auto& p : s.scene.proposals) f.obj_loc.push_back(const_vec5(t, location_vector(p.box)));
  f.obj = enc.objects;

  f.ent_trf_app_.resize(g.entities.size());
  f.ent_trf_pos_.resize(g.entities.size());
  f.obj_trf_app_.resize(s.scene.proposals.size());
  f.obj_trf_pos_.resize(s.scene.proposals.size());
  f.rel_trf_lang_.resize(g.relations.size());
  return f;
}

}  // namespace relmatch
