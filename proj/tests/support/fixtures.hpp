#pragma once

// Shared miniature fixtures for the model-level tests.

#include <string>
#include <vector>

#include "relmatch/dataset.hpp"
#include "relmatch/model.hpp"
#include "relmatch/rng.hpp"

namespace relmatch::testing {

inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.h = 12;
  cfg.K = 3;
  cfg.max_proposals = 6;
  cfg.appearance_dim = 5;
  cfg.sim_embed = 6;
  cfg.classify_hidden = 4;
  cfg.regress_hidden = 6;
  return cfg;
}

inline Vocabulary tiny_vocab() {
  Vocabulary v;
  v.words = {"<unk>", "red", "blue", "cube", "ball", "disk", "left-of", "above", "near"};
  for (std::size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
  return v;
}

// Chain graph root -> e1 -> ... with simple phrases, plus a random scene.
inline Sample chain_sample(int entities, int proposals, std::uint64_t seed,
                           int appearance_dim = 5) {
  Rng rng(seed);
  Sample s;
  s.id = "fixture-" + std::to_string(seed);
  s.split = "train";
  s.y = 1;
  const std::vector<std::string> nouns = {"cube", "ball", "disk"};
  const std::vector<std::string> colors = {"red", "blue"};
  const std::vector<std::string> rels = {"left-of", "above", "near"};
  for (int i = 0; i < entities; ++i) {
    EntityPhrase e;
    e.id = i;
    e.words = {colors[static_cast<std::size_t>(rng.uniform_int(0, 1))],
               nouns[static_cast<std::size_t>(rng.uniform_int(0, 2))]};
    s.graph.entities.push_back(e);
  }
  for (int i = 1; i < entities; ++i)
    s.graph.relations.push_back(
        {i - 1, i - 1, i, {rels[static_cast<std::size_t>(rng.uniform_int(0, 2))]}});
  s.graph.root = 0;

  for (int j = 0; j < proposals; ++j) {
    BoxProposal p;
    p.id = j;
    p.box = Box{rng.uniform(0.0, 0.7), rng.uniform(0.0, 0.7), rng.uniform(0.05, 0.3),
                rng.uniform(0.05, 0.3)};
    p.score = rng.uniform(0.5, 1.0);
    p.feat = Eigen::VectorXd::Zero(appearance_dim);
    for (int k = 0; k < appearance_dim; ++k) p.feat(k) = rng.normal(0.0, 1.0);
    s.scene.proposals.push_back(p);
  }
  if (entities > 0) s.referent_box = s.scene.proposals[0].box;
  return s;
}

}  // namespace relmatch::testing
