#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "relmatch/geometry.hpp"
#include "relmatch/scene_graph.hpp"

namespace relmatch {

// ---------------------------------------------------------------------------
// Ground-truth correspondence recovery: find the embedding of a parsed
// language scene graph inside an annotated scene graph, seeded at the node
// whose box coincides with the referent box. The search expands the mapped
// subtree one parsed edge at a time, keeping only successors whose phrase
// annotations are consistent with the parsed phrases.
// ---------------------------------------------------------------------------

struct AnnotatedNode {
  int id = 0;
  Box box;
  std::vector<std::string> words;
};

struct AnnotatedEdge {
  int src = 0;  // subject node id
  int dst = 0;  // object node id
  std::vector<std::string> words;
};

struct AnnotatedSceneGraph {
  std::vector<AnnotatedNode> nodes;
  std::vector<AnnotatedEdge> edges;

  const AnnotatedNode* node_by_id(int id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
};

struct CorrespondenceLabel {
  std::map<int, int> entity_to_node;                   // entity id -> annotated node id
  std::map<int, std::pair<int, int>> relation_to_pair; // relation id -> (subject, object) node ids
  bool unique = false;
};

enum class MatchStatus { Found, NotFound, Ambiguous };

struct MatchResult {
  MatchStatus status = MatchStatus::NotFound;
  CorrespondenceLabel label;  // populated when status == Found
  int match_count = 0;
};

// A parsed phrase is consistent with an annotation when every parsed word
// appears among the annotation words (parsed phrases may under-specify).
inline bool phrase_consistent(const std::vector<std::string>& parsed,
                              const std::vector<std::string>& annotated) {
  for (const auto& w : parsed)
    if (std::find(annotated.begin(), annotated.end(), w) == annotated.end()) return false;
  return true;
}

inline MatchResult match_subgraph(const LanguageSceneGraph& parsed,
                                  const AnnotatedSceneGraph& gt,
                                  const Box& referent_box,
                                  double seed_iou = 0.99) {
  MatchResult result;
  if (validate_tree(parsed) != TreeCheck::Ok) return result;
  const TreeIndex tree = TreeIndex::build(parsed);
  const int n = parsed.entity_count();
  const int gn = static_cast<int>(gt.nodes.size());

  // Parsed edges in BFS order so the subject side is always mapped first.
  std::vector<int> edge_order;
  for (int v : tree.bfs_order)
    for (int r : tree.child_relations[v]) edge_order.push_back(r);

  struct State {
    std::vector<int> map;  // entity index -> gt node index, -1 unset
    int next_edge = 0;
  };

  std::vector<State> stack;
  for (int v = 0; v < gn; ++v) {
    // Box equality is IoU-based; serialized coordinates drift.
    if (iou(gt.nodes[v].box, referent_box) < seed_iou) continue;
    if (!phrase_consistent(parsed.entities[tree.root].words, gt.nodes[v].words)) continue;
    State s;
    s.map.assign(n, -1);
    s.map[tree.root] = v;
    stack.push_back(std::move(s));
  }

  std::set<std::vector<int>> complete;
  while (!stack.empty()) {
    State s = std::move(stack.back());
    stack.pop_back();
    if (s.next_edge == static_cast<int>(edge_order.size())) {
      complete.insert(s.map);
      continue;
    }
    const auto& rel = parsed.relations[edge_order[s.next_edge]];
    const int pi = tree.index_of_id.at(rel.subject);
    const int ci = tree.index_of_id.at(rel.object);
    const int p_gt = s.map[pi];
    for (const auto& e : gt.edges) {
      if (e.src != gt.nodes[p_gt].id) continue;
      if (!phrase_consistent(rel.words, e.words)) continue;
      int u = -1;
      for (int v = 0; v < gn; ++v)
        if (gt.nodes[v].id == e.dst) u = v;
      if (u < 0) continue;
      if (!phrase_consistent(parsed.entities[ci].words, gt.nodes[u].words)) continue;
      bool used = false;
      for (int m : s.map)
        if (m == u) used = true;
      if (used) continue;  // injective mapping
      State next = s;
      next.map[ci] = u;
      next.next_edge = s.next_edge + 1;
      stack.push_back(std::move(next));
    }
  }

  result.match_count = static_cast<int>(complete.size());
  if (complete.empty()) {
    result.status = MatchStatus::NotFound;
    return result;
  }
  if (complete.size() > 1) {
    result.status = MatchStatus::Ambiguous;
    return result;
  }

  const auto& m = *complete.begin();
  result.status = MatchStatus::Found;
  result.label.unique = true;
  for (int i = 0; i < n; ++i)
    result.label.entity_to_node[parsed.entities[i].id] = gt.nodes[m[i]].id;
  for (const auto& rel : parsed.relations) {
    const int pi = tree.index_of_id.at(rel.subject);
    const int ci = tree.index_of_id.at(rel.object);
    result.label.relation_to_pair[rel.id] = {gt.nodes[m[pi]].id, gt.nodes[m[ci]].id};
  }
  return result;
}

}  // namespace relmatch
