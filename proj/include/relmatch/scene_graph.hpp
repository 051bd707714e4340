#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "relmatch/errors.hpp"
#include "relmatch/geometry.hpp"

namespace relmatch {

// ---------------------------------------------------------------------------
// Language scene graph: a rooted tree of entity phrases connected by relation
// phrases. Edges are oriented parent -> child, with the relation subject on
// the parent side; the root is the referent.
// ---------------------------------------------------------------------------

struct EntityPhrase {
  int id = 0;
  std::vector<std::string> words;
};

struct RelationPhrase {
  int id = 0;
  int subject = 0;  // parent entity id
  int object = 0;   // child entity id
  std::vector<std::string> words;
};

struct LanguageSceneGraph {
  std::vector<EntityPhrase> entities;
  std::vector<RelationPhrase> relations;
  int root = 0;

  int entity_count() const { return static_cast<int>(entities.size()); }
  int relation_count() const { return static_cast<int>(relations.size()); }

  const EntityPhrase* entity_by_id(int id) const {
    for (const auto& e : entities)
      if (e.id == id) return &e;
    return nullptr;
  }
  const RelationPhrase* relation_by_id(int id) const {
    for (const auto& r : relations)
      if (r.id == id) return &r;
    return nullptr;
  }

  // Canonical token stream: entity words in listed order, then relation words.
  std::vector<std::string> token_stream() const {
    std::vector<std::string> out;
    for (const auto& e : entities) out.insert(out.end(), e.words.begin(), e.words.end());
    for (const auto& r : relations) out.insert(out.end(), r.words.begin(), r.words.end());
    return out;
  }
  int word_count() const { return static_cast<int>(token_stream().size()); }
};

enum class TreeCheck { Ok, Cycle, Disconnected, MultiRoot, BadReference };

inline const char* to_string(TreeCheck c) {
  switch (c) {
    case TreeCheck::Ok: return "Ok";
    case TreeCheck::Cycle: return "CycleError";
    case TreeCheck::Disconnected: return "DisconnectedError";
    case TreeCheck::MultiRoot: return "MultiRootError";
    case TreeCheck::BadReference: return "BadReferenceError";
  }
  return "?";
}

// Tree validity: the undirected view must be connected and acyclic, every
// relation must point away from the root, and the declared root is the only
// node without a parent.
inline TreeCheck validate_tree(const LanguageSceneGraph& g) {
  const int n = g.entity_count();
  if (n == 0) return TreeCheck::BadReference;

  std::map<int, int> pos;  // entity id -> dense index
  for (int i = 0; i < n; ++i) {
    if (pos.count(g.entities[i].id)) return TreeCheck::BadReference;
    pos[g.entities[i].id] = i;
  }
  if (!pos.count(g.root)) return TreeCheck::BadReference;

  std::vector<std::vector<int>> undirected(n);
  std::vector<int> indeg(n, 0);
  for (const auto& r : g.relations) {
    auto si = pos.find(r.subject);
    auto oi = pos.find(r.object);
    if (si == pos.end() || oi == pos.end()) return TreeCheck::BadReference;
    undirected[si->second].push_back(oi->second);
    undirected[oi->second].push_back(si->second);
    indeg[oi->second]++;
  }

  // Connectivity over the undirected view.
  std::vector<char> seen(n, 0);
  std::vector<int> stack = {pos[g.root]};
  seen[pos[g.root]] = 1;
  int reached = 0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    ++reached;
    for (int u : undirected[v])
      if (!seen[u]) {
        seen[u] = 1;
        stack.push_back(u);
      }
  }
  if (reached < n) return TreeCheck::Disconnected;
  if (g.relation_count() > n - 1) return TreeCheck::Cycle;

  // Connected with n-1 edges is a tree; now check the orientation.
  if (indeg[pos[g.root]] != 0) return TreeCheck::MultiRoot;
  for (int i = 0; i < n; ++i)
    if (i != pos[g.root] && indeg[i] != 1) return TreeCheck::MultiRoot;
  return TreeCheck::Ok;
}

// Dense adjacency view of a validated graph; entity indices below are
// positions into graph.entities, not ids.
struct TreeIndex {
  std::vector<int> parent;                        // parent entity index, -1 at root
  std::vector<int> parent_relation;               // relation index into graph.relations, -1 at root
  std::vector<std::vector<int>> children;         // child entity indices
  std::vector<std::vector<int>> child_relations;  // relation indices, aligned with children
  std::vector<int> bfs_order;                     // root first
  int root = 0;
  std::map<int, int> index_of_id;

  static TreeIndex build(const LanguageSceneGraph& g) {
    if (validate_tree(g) != TreeCheck::Ok)
      throw Error("TreeIndex: graph is not a valid rooted tree");
    TreeIndex t;
    const int n = g.entity_count();
    t.parent.assign(n, -1);
    t.parent_relation.assign(n, -1);
    t.children.resize(n);
    t.child_relations.resize(n);
    for (int i = 0; i < n; ++i) t.index_of_id[g.entities[i].id] = i;
    t.root = t.index_of_id.at(g.root);
    for (int r = 0; r < g.relation_count(); ++r) {
      const auto& rel = g.relations[r];
      const int p = t.index_of_id.at(rel.subject);
      const int c = t.index_of_id.at(rel.object);
      t.parent[c] = p;
      t.parent_relation[c] = r;
      t.children[p].push_back(c);
      t.child_relations[p].push_back(r);
    }
    t.bfs_order.push_back(t.root);
    for (std::size_t q = 0; q < t.bfs_order.size(); ++q)
      for (int c : t.children[t.bfs_order[q]]) t.bfs_order.push_back(c);
    return t;
  }
};

// ---------------------------------------------------------------------------
// Visual scene: box proposals with appearance features.
// ---------------------------------------------------------------------------

struct BoxProposal {
  int id = 0;
  Box box;
  double score = 1.0;
  Eigen::VectorXd feat;
};

struct VisualScene {
  std::vector<BoxProposal> proposals;
  std::array<int, 2> image_size = {1000, 1000};

  int proposal_count() const { return static_cast<int>(proposals.size()); }
};

// ---------------------------------------------------------------------------
// JSON round-trips (schema is shared with the corpus files).
// ---------------------------------------------------------------------------

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const LanguageSceneGraph& g) {
  ordered_json j;
  j["entities"] = ordered_json::array();
  for (const auto& e : g.entities)
    j["entities"].push_back({{"id", e.id}, {"words", e.words}});
  j["relations"] = ordered_json::array();
  for (const auto& r : g.relations)
    j["relations"].push_back(
        {{"id", r.id}, {"sub", r.subject}, {"obj", r.object}, {"words", r.words}});
  j["root"] = g.root;
  return j;
}

inline LanguageSceneGraph graph_from_json(const json& j) {
  LanguageSceneGraph g;
  for (const auto& e : j.at("entities")) {
    EntityPhrase p;
    p.id = e.at("id").get<int>();
    p.words = e.at("words").get<std::vector<std::string>>();
    g.entities.push_back(std::move(p));
  }
  for (const auto& r : j.at("relations")) {
    RelationPhrase p;
    p.id = r.at("id").get<int>();
    p.subject = r.at("sub").get<int>();
    p.object = r.at("obj").get<int>();
    p.words = r.at("words").get<std::vector<std::string>>();
    g.relations.push_back(std::move(p));
  }
  g.root = j.at("root").get<int>();
  return g;
}

inline ordered_json to_json(const Box& b) { return ordered_json::array({b.x, b.y, b.w, b.h}); }

inline Box box_from_json(const json& j) {
  return Box{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
             j.at(3).get<double>()};
}

inline ordered_json to_json(const VisualScene& s) {
  ordered_json j;
  j["image_size"] = s.image_size;
  j["proposals"] = ordered_json::array();
  for (const auto& p : s.proposals) {
    std::vector<double> feat(p.feat.data(), p.feat.data() + p.feat.size());
    j["proposals"].push_back(
        {{"id", p.id}, {"box", to_json(p.box)}, {"score", p.score}, {"feat", feat}});
  }
  return j;
}

inline VisualScene scene_from_json(const json& j) {
  VisualScene s;
  if (j.contains("image_size"))
    s.image_size = {j["image_size"].at(0).get<int>(), j["image_size"].at(1).get<int>()};
  for (const auto& p : j.at("proposals")) {
    BoxProposal bp;
    bp.id = p.at("id").get<int>();
    bp.box = box_from_json(p.at("box"));
    bp.score = p.at("score").get<double>();
    const auto feat = p.at("feat").get<std::vector<double>>();
    bp.feat = Eigen::Map<const Eigen::VectorXd>(feat.data(), feat.size());
    s.proposals.push_back(std::move(bp));
  }
  return s;
}

}  // namespace relmatch
