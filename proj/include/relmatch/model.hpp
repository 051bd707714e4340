#pragma once

#include <string>

#include <json.hpp>

#include "relmatch/belief.hpp"
#include "relmatch/dataset.hpp"
#include "relmatch/nn.hpp"
#include "relmatch/params.hpp"

namespace relmatch {

struct ModelConfig {
  int d = 64;              // token / feature embedding size
  int h = 128;             // phrase state size (both LSTM directions together)
  int K = 5;               // pruning width
  int max_proposals = 30;  // scenes must stay at or below this
  int appearance_dim = 13; // raw proposal feature size
  int sim_embed = 64;      // similarity transform output size
  int classify_hidden = 32;
  int regress_hidden = 64;
  double eps = 1e-8;

  void validate() const {
    if (d <= 0 || h <= 0 || K <= 0 || max_proposals <= 0)
      throw Error("ModelConfig: sizes must be positive");
    if (d % 2 != 0) throw Error("ModelConfig: d must be even");
    if (h % 2 != 0) throw Error("ModelConfig: h must be even");
  }

  nlohmann::ordered_json serialize() const {
    return {{"d", d},
            {"h", h},
            {"K", K},
            {"max_proposals", max_proposals},
            {"appearance_dim", appearance_dim},
            {"sim_embed", sim_embed},
            {"classify_hidden", classify_hidden},
            {"regress_hidden", regress_hidden},
            {"eps", eps}};
  }
  static ModelConfig deserialize(const json& j) {
    ModelConfig c;
    c.d = j.at("d").get<int>();
    c.h = j.at("h").get<int>();
    c.K = j.at("K").get<int>();
    c.max_proposals = j.at("max_proposals").get<int>();
    c.appearance_dim = j.at("appearance_dim").get<int>();
    c.sim_embed = j.at("sim_embed").get<int>();
    c.classify_hidden = j.at("classify_hidden").get<int>();
    c.regress_hidden = j.at("regress_hidden").get<int>();
    c.eps = j.at("eps").get<double>();
    return c;
  }
};

// Parameter groups for the optimizer.
inline constexpr int kGroupReasoning = 0;
inline constexpr int kGroupEncoder = 1;

// The full trainable model: token encoder tables, phrase encoder, similarity
// heads, gates, and the task heads. Construction order fixes parameter
// indices, so checkpoints are stable for a given config.
struct Model {
  ModelConfig cfg;
  Vocabulary vocab;
  ad::ParamStore params;

  // token encoder
  ad::Param* word_emb = nullptr;  // vocab x d
  nn::Linear obj_proj;            // appearance_dim -> d
  nn::Linear mix;                 // shared d -> d mixing layer

  // phrase encoder
  nn::BiLstm lstm;            // shared across entity and SPO phrases
  ad::Param* attn_app = nullptr;  // h
  ad::Param* attn_pos = nullptr;  // h
  ad::Param* attn_spo = nullptr;  // h
  nn::Linear le_proj;             // d -> 5

  // visual relation projections; the two halves concatenate to d
  ad::Param* rel_Wl = nullptr;  // d/2 x 5
  ad::Param* rel_We = nullptr;  // d/2 x 2d

  // similarity heads
  belief::SimEntParams sim_app;  // on d
  belief::SimEntParams sim_pos;  // on 5
  belief::SimRelParams sim_rel;  // on d, shared for both relation modalities

  // gates; the relation gate is independent per task and direction
  ad::Param* gate_app = nullptr;
  ad::Param* gate_pos = nullptr;
  ad::Param* gate_rel_grounding_bp = nullptr;
  ad::Param* gate_rel_matching_bp = nullptr;
  ad::Param* gate_rel_matching_td = nullptr;

  // heads
  nn::Mlp classify_mlp;  // K -> 1
  nn::Mlp regress_mlp;   // (d + 5 + d) -> 4
  // Beliefs live in [0,1], so the grounding softmax needs a learned scale to
  // sharpen; without it the cross-entropy has a floor of log(e + N_o - 1) - 1.
  ad::Param* grd_temp = nullptr;

  int gate_input_dim() const { return cfg.h + 2 * cfg.max_proposals; }

  static Model create(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.vocab = std::move(vocab);
    Rng rng(seed);
    auto& st = m.params;
    const int d = cfg.d;
    const int h = cfg.h;

    m.word_emb = &st.create("enc.word_emb",
                            ad::gaussian_init(rng, m.vocab.size(), d, 0.1), kGroupEncoder);
    m.obj_proj = nn::Linear::create(st, "enc.obj_proj", cfg.appearance_dim, d, rng,
                                    kGroupEncoder);
    m.mix = nn::Linear::create(st, "enc.mix", d, d, rng, kGroupEncoder);

    m.lstm = nn::BiLstm::create(st, "phrase.lstm", d, h / 2, rng);
    m.attn_app = &st.create("phrase.attn_app", ad::xavier_uniform(rng, h, 1));
    m.attn_pos = &st.create("phrase.attn_pos", ad::xavier_uniform(rng, h, 1));
    m.attn_spo = &st.create("phrase.attn_spo", ad::xavier_uniform(rng, h, 1));
    m.le_proj = nn::Linear::create(st, "phrase.le_proj", d, 5, rng);

    m.rel_Wl = &st.create("vis.rel_Wl", ad::xavier_uniform(rng, d / 2, 5));
    m.rel_We = &st.create("vis.rel_We", ad::xavier_uniform(rng, d / 2, 2 * d));

    m.sim_app = belief::SimEntParams::create(st, "sim.app", d, cfg.sim_embed, rng);
    m.sim_pos = belief::SimEntParams::create(st, "sim.pos", 5, cfg.sim_embed, rng);
    m.sim_rel = belief::SimRelParams::create(st, "sim.rel", d, cfg.sim_embed, rng);

    const int gdim = m.gate_input_dim();
    m.gate_app = &st.create("gate.app", ad::xavier_uniform(rng, gdim, 1));
    m.gate_pos = &st.create("gate.pos", ad::xavier_uniform(rng, gdim, 1));
    m.gate_rel_grounding_bp =
        &st.create("gate.rel.grounding.bp", ad::xavier_uniform(rng, gdim, 1));
    m.gate_rel_matching_bp =
        &st.create("gate.rel.matching.bp", ad::xavier_uniform(rng, gdim, 1));
    m.gate_rel_matching_td =
        &st.create("gate.rel.matching.td", ad::xavier_uniform(rng, gdim, 1));

    m.classify_mlp = nn::Mlp::create(st, "head.match", cfg.K, cfg.classify_hidden, 1, rng);
    m.regress_mlp =
        nn::Mlp::create(st, "head.regress", 2 * d + 5, cfg.regress_hidden, 4, rng);
    m.grd_temp = &st.create("head.grd_temp", (ad::Mat(1, 1) << 10.0).finished());
    // Regression starts as the identity refinement (zero offsets).
    m.regress_mlp.l2.W->value.setZero();
    m.regress_mlp.l2.b->value.setZero();
    return m;
  }
};

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const Model& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointVersion;
  j["model"] = m.cfg.serialize();
  j["vocab"] = m.vocab.serialize();
  j["params"] = m.params.serialize();
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << j.dump();
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path);
  json j;
  in >> j;
  if (j.at("format_version").get<int>() != kCheckpointVersion)
    throw Error("unsupported checkpoint version");
  Model m = Model::create(ModelConfig::deserialize(j.at("model")),
                          Vocabulary::deserialize(j.at("vocab")), /*seed=*/0);
  m.params.deserialize(j.at("params"));
  return m;
}

}  // namespace relmatch
