#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "relmatch/autodiff.hpp"
#include "relmatch/dataset.hpp"
#include "relmatch/model.hpp"

namespace relmatch {

using ad::Tape;
using ad::Var;

// Token-level representations for one sample: one vector per expression word
// (in canonical token-stream order) and one per proposal.
struct TokenEncoding {
  std::vector<Var> words;
  std::vector<Var> objects;
};

class TokenEncoder {
 public:
  virtual ~TokenEncoder() = default;
  virtual TokenEncoding encode(Tape& t, const Model& m, const Sample& s) const = 0;
};

// Default encoder: learned word embedding table plus a projection of the raw
// proposal features, with one shared mixing layer on both modalities.
class TableEncoder : public TokenEncoder {
 public:
  TokenEncoding encode(Tape& t, const Model& m, const Sample& s) const override {
    TokenEncoding enc;
    Var table = t.param(*m.word_emb);
    for (const auto& w : s.graph.token_stream()) {
      Var row = ad::transpose(ad::gather_rows(table, {m.vocab.id(w)}));
      enc.words.push_back(ad::tanh_(m.mix(t, row)));
    }
    for (const auto& p : s.scene.proposals) {
      if (p.feat.size() != m.cfg.appearance_dim)
        throw DimensionMismatch("proposal feature size does not match the model config");
      Var raw = t.constant(p.feat);
      enc.objects.push_back(ad::tanh_(m.mix(t, m.obj_proj(t, raw))));
    }
    return enc;
  }
};

// Encoder backed by precomputed per-sample features, e.g. exported from an
// external cross-modal model. File schema:
//   {"d": D, "samples": {"<id>": {"words": [[...]], "objects": [[...]]}}}
class FileEncoder : public TokenEncoder {
 public:
  explicit FileEncoder(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read feature file " + path);
    in >> data_;
    if (!data_.contains("d") || !data_.contains("samples"))
      throw Error("feature file missing d/samples");
  }

  TokenEncoding encode(Tape& t, const Model& m, const Sample& s) const override {
    const int d = data_.at("d").get<int>();
    if (d != m.cfg.d)
      throw DimensionMismatch("precomputed feature size " + std::to_string(d) +
                              " does not match configured " + std::to_string(m.cfg.d));
    const auto& entry = data_.at("samples").at(s.id);
    TokenEncoding enc;
    auto load = [&](const json& rows, std::vector<Var>& out, const char* what,
                    std::size_t expected) {
      if (rows.size() != expected)
        throw DimensionMismatch(std::string(what) + " count mismatch for sample " + s.id);
      for (const auto& row : rows) {
        const auto v = row.get<std::vector<double>>();
        if (static_cast<int>(v.size()) != d)
          throw DimensionMismatch(std::string(what) + " feature size mismatch");
        out.push_back(t.constant(Eigen::Map<const Eigen::VectorXd>(v.data(), d)));
      }
    };
    load(entry.at("words"), enc.words, "word", s.graph.token_stream().size());
    load(entry.at("objects"), enc.objects, "object", s.scene.proposals.size());
    return enc;
  }

 private:
  json data_;
};

inline TokenEncoding encode_tokens(Tape& t, const Model& m, const Sample& s,
                                   const TokenEncoder& encoder) {
  if (s.scene.proposal_count() > m.cfg.max_proposals)
    throw Error("scene exceeds max_proposals");
  return encoder.encode(t, m, s);
}

}  // namespace relmatch
