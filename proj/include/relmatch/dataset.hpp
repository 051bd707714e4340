#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "relmatch/scene_graph.hpp"

namespace relmatch {

// How a sample was produced; carries the ground-truth correspondences used by
// the diagnosis tooling.
struct Substitution {
  int relation_id = -1;
  std::vector<std::string> original;
  std::vector<std::string> replacement;
};

struct Provenance {
  std::uint64_t seed = 0;
  int entity_count = 0;
  std::vector<int> entity_to_object;    // entity index -> world object index
  std::vector<int> entity_to_proposal;  // entity index -> proposal index
  std::optional<Substitution> substitution;
  std::string twin_id;
};

// One training/evaluation unit: an expression graph over a visual scene with
// either a referent box (matched) or a mismatched relation id.
struct Sample {
  std::string id;
  std::string split;  // train | in_dist_test | ood_test
  int y = 1;
  LanguageSceneGraph graph;
  VisualScene scene;
  std::optional<Box> referent_box;
  std::optional<int> mismatched_relation;
  Provenance prov;
};

inline ordered_json to_json(const Sample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["split"] = s.split;
  j["y"] = s.y;
  j["graph"] = to_json(s.graph);
  j["scene"] = to_json(s.scene);
  if (s.referent_box) j["referent_box"] = to_json(*s.referent_box);
  if (s.mismatched_relation) j["mismatched_relation"] = *s.mismatched_relation;
  ordered_json prov;
  prov["seed"] = s.prov.seed;
  prov["entity_count"] = s.prov.entity_count;
  prov["entity_to_object"] = s.prov.entity_to_object;
  prov["entity_to_proposal"] = s.prov.entity_to_proposal;
  if (s.prov.substitution) {
    prov["substitution"] = {{"relation", s.prov.substitution->relation_id},
                            {"original", s.prov.substitution->original},
                            {"replacement", s.prov.substitution->replacement}};
  }
  if (!s.prov.twin_id.empty()) prov["twin"] = s.prov.twin_id;
  j["provenance"] = std::move(prov);
  return j;
}

inline Sample sample_from_json(const json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.split = j.at("split").get<std::string>();
  s.y = j.at("y").get<int>();
  s.graph = graph_from_json(j.at("graph"));
  s.scene = scene_from_json(j.at("scene"));
  if (j.contains("referent_box")) s.referent_box = box_from_json(j.at("referent_box"));
  if (j.contains("mismatched_relation"))
    s.mismatched_relation = j.at("mismatched_relation").get<int>();
  if (j.contains("provenance")) {
    const auto& p = j.at("provenance");
    s.prov.seed = p.value("seed", std::uint64_t{0});
    s.prov.entity_count = p.value("entity_count", 0);
    if (p.contains("entity_to_object"))
      s.prov.entity_to_object = p.at("entity_to_object").get<std::vector<int>>();
    if (p.contains("entity_to_proposal"))
      s.prov.entity_to_proposal = p.at("entity_to_proposal").get<std::vector<int>>();
    if (p.contains("substitution")) {
      Substitution sub;
      sub.relation_id = p.at("substitution").at("relation").get<int>();
      sub.original = p.at("substitution").at("original").get<std::vector<std::string>>();
      sub.replacement = p.at("substitution").at("replacement").get<std::vector<std::string>>();
      s.prov.substitution = std::move(sub);
    }
    s.prov.twin_id = p.value("twin", std::string{});
  }
  return s;
}

struct Corpus {
  std::vector<Sample> samples;
  json splits;  // split name -> [sample ids]
  json stats;

  std::vector<const Sample*> split(const std::string& name) const {
    std::vector<const Sample*> out;
    for (const auto& s : samples)
      if (s.split == name) out.push_back(&s);
    return out;
  }
};

inline void write_jsonl(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& s : samples) out << to_json(s).dump() << "\n";
}

inline std::vector<Sample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::vector<Sample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(sample_from_json(json::parse(line)));
  }
  return out;
}

inline Corpus load_corpus(const std::string& dir) {
  Corpus c;
  c.samples = read_jsonl(dir + "/samples.jsonl");
  std::ifstream sp(dir + "/splits.json");
  if (sp) sp >> c.splits;
  std::ifstream st(dir + "/stats.json");
  if (st) st >> c.stats;
  return c;
}

// Word index over a corpus; id 0 is reserved for unknown tokens.
struct Vocabulary {
  std::vector<std::string> words;  // words[0] == "<unk>"
  std::map<std::string, int> index;

  static Vocabulary build(const std::vector<Sample>& samples) {
    std::set<std::string> seen;
    for (const auto& s : samples)
      for (const auto& w : s.graph.token_stream()) seen.insert(w);
    Vocabulary v;
    v.words.push_back("<unk>");
    for (const auto& w : seen) v.words.push_back(w);
    for (std::size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
    return v;
  }

  int id(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? 0 : it->second;
  }
  int size() const { return static_cast<int>(words.size()); }

  nlohmann::ordered_json serialize() const { return nlohmann::ordered_json(words); }
  static Vocabulary deserialize(const json& j) {
    Vocabulary v;
    v.words = j.get<std::vector<std::string>>();
    for (std::size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
    return v;
  }
};

}  // namespace relmatch
