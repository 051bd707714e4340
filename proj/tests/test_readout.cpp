#include <catch2/catch_amalgamated.hpp>

#include "relmatch/readout.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace relmatch;

namespace {

Model tiny_model(std::uint64_t seed = 42) {
  return Model::create(testing::tiny_config(), testing::tiny_vocab(), seed);
}

PropagationResult fake_result(const std::vector<double>& p_bp,
                              const std::vector<double>& p_td) {
  PropagationResult r;
  r.task = Task::Matching;
  r.confidences[Direction::BottomUp] = p_bp;
  r.confidences[Direction::TopDown] = p_td;
  return r;
}

LanguageSceneGraph star3() {
  LanguageSceneGraph g;
  g.entities = {{0, {"root"}}, {1, {"c1"}}, {2, {"c2"}}};
  g.relations = {{0, 0, 1, {"r"}}, {1, 0, 2, {"s"}}};
  g.root = 0;
  return g;
}

}  // namespace

TEST_CASE("itm_score is the double minimum") {
  auto r = fake_result({0.9, 0.8}, {0.7, 0.95});
  REQUIRE(itm_score(r) == 0.7);
  auto flat = fake_result({0.5, 0.5}, {0.5, 0.5});
  REQUIRE(itm_score(flat) == 0.5);
}

TEST_CASE("itm_score never rises when a confidence drops") {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> bp, td;
    const int n = rng.uniform_int(1, 5);
    for (int i = 0; i < n; ++i) {
      bp.push_back(rng.uniform(0, 1));
      td.push_back(rng.uniform(0, 1));
    }
    const double before = itm_score(fake_result(bp, td));
    auto bp2 = bp;
    const int j = rng.uniform_int(0, n - 1);
    bp2[j] = std::max(0.0, bp2[j] - rng.uniform(0, 0.5));
    REQUIRE(itm_score(fake_result(bp2, td)) <= before);
  }
}

TEST_CASE("ground_referent picks the max belief, ties to lowest id") {
  const auto tree = TreeIndex::build(star3());
  PropagationResult r;
  r.task = Task::Grounding;
  belief::Belief root;
  root.ids = {0, 1, 2};

  root.values = (Eigen::VectorXd(3) << 0.1, 0.8, 0.3).finished();
  r.beliefs[Direction::BottomUp] = {root, root, root};
  REQUIRE(ground_referent(r, tree) == 1);

  root.values = (Eigen::VectorXd(3) << 0.4, 0.4, 0.4).finished();
  r.beliefs[Direction::BottomUp] = {root, root, root};
  REQUIRE(ground_referent(r, tree) == 0);

  belief::Belief single;
  single.ids = {0};
  single.values = (Eigen::VectorXd(1) << 0.2).finished();
  LanguageSceneGraph one;
  one.entities = {{0, {"x"}}};
  one.root = 0;
  r.beliefs[Direction::BottomUp] = {single};
  REQUIRE(ground_referent(r, TreeIndex::build(one)) == 0);
}

TEST_CASE("ground_referent is invariant to monotone transforms") {
  const auto tree = TreeIndex::build(star3());
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    belief::Belief root;
    root.ids = {0, 1, 2, 3};
    root.values = Eigen::VectorXd(4);
    for (int i = 0; i < 4; ++i) root.values(i) = rng.uniform(0, 1);
    PropagationResult r;
    r.beliefs[Direction::BottomUp] = {root, root, root};
    const int before = ground_referent(r, tree);
    // strictly monotone transform
    for (int i = 0; i < 4; ++i) root.values(i) = std::tanh(3.0 * root.values(i)) + 2.0;
    r.beliefs[Direction::BottomUp] = {root, root, root};
    REQUIRE(ground_referent(r, tree) == before);
  }
}

TEST_CASE("mismatched_relation matches the worked example") {
  const auto g = star3();
  const auto tree = TreeIndex::build(g);
  // entity order: root, c1, c2
  const std::vector<double> p_bp = {0.2, 0.9, 0.8};
  const std::vector<double> p_td = {0.95, 0.3, 0.9};
  // d(root,c1) = (0.2-0.9)+(0.3-0.95) = -1.35 ; d(root,c2) = -0.65
  REQUIRE(mismatched_relation(g, tree, p_bp, p_td) == 0);
}

TEST_CASE("mismatched_relation tie-breaks to the lowest relation id") {
  const auto g = star3();
  const auto tree = TreeIndex::build(g);
  REQUIRE(mismatched_relation(g, tree, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}) == 0);
}

TEST_CASE("mismatched_relation is shift invariant") {
  const auto g = star3();
  const auto tree = TreeIndex::build(g);
  Rng rng(7);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> bp = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    std::vector<double> td = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    const int before = mismatched_relation(g, tree, bp, td);
    const double shift = rng.uniform(-0.2, 0.2);
    for (auto& v : bp) v += shift;
    REQUIRE(mismatched_relation(g, tree, bp, td) == before);
  }
}

TEST_CASE("mismatched_relation requires relations") {
  LanguageSceneGraph g;
  g.entities = {{0, {"x"}}};
  g.root = 0;
  REQUIRE_THROWS_AS(mismatched_relation(g, TreeIndex::build(g), {0.5}, {0.5}), NoRelations);
}

TEST_CASE("readouts agree with brute force on random configurations") {
  Rng rng(11);
  const std::vector<std::string> nouns = {"a", "b"};
  const std::vector<std::string> verbs = {"r", "s"};
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(2, 6);
    const auto g = testing::random_tree(rng, n, nouns, verbs);
    const auto tree = TreeIndex::build(g);
    std::vector<double> bp(n), td(n);
    for (int i = 0; i < n; ++i) {
      bp[static_cast<std::size_t>(i)] = rng.uniform(0, 1);
      td[static_cast<std::size_t>(i)] = rng.uniform(0, 1);
    }
    std::vector<std::array<int, 3>> edges;
    for (const auto& rel : g.relations)
      edges.push_back({rel.id, tree.index_of_id.at(rel.subject),
                       tree.index_of_id.at(rel.object)});
    REQUIRE(mismatched_relation(g, tree, bp, td) ==
            testing::brute_mismatched_relation(edges, bp, td));
    REQUIRE(itm_score(fake_result(bp, td)) == testing::brute_min_pool(bp, td));
  }
}

TEST_CASE("refine_box with the zero-initialized head keeps the box") {
  Model m = tiny_model();
  TableEncoder enc;
  const auto s = testing::chain_sample(2, 4, 33);
  Tape t;
  ForwardRequest req;
  req.matching = false;
  auto fw = run_forward(t, m, enc, s, req);
  auto r = refine_box(fw, 1);
  REQUIRE(r.delta.norm() == 0.0);
  REQUIRE(r.box == s.scene.proposals[1].box);
  REQUIRE(box_valid(r.box));
}

TEST_CASE("refined boxes are always valid after clamping") {
  Model m = tiny_model(101);
  // push the head away from zero so offsets are nonzero
  Rng rng(55);
  m.regress_mlp.l2.W->value = ad::gaussian_init(rng, 4, m.cfg.regress_hidden, 0.8);
  m.regress_mlp.l2.b->value = ad::gaussian_init(rng, 4, 1, 0.5);
  TableEncoder enc;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto s = testing::chain_sample(2, 4, seed);
    Tape t;
    ForwardRequest req;
    req.matching = false;
    auto fw = run_forward(t, m, enc, s, req);
    for (int j = 0; j < 4; ++j) {
      auto r = refine_box(fw, j);
      REQUIRE(box_valid(r.box));
    }
  }
}

TEST_CASE("predict joint takes the branch given by the match decision") {
  Model m = tiny_model(5);
  TableEncoder enc;
  const auto s = testing::chain_sample(3, 5, 71);

  // classify head biased high -> matched branch
  m.classify_mlp.l2.W->value.setZero();
  m.classify_mlp.l2.b->value.setConstant(4.0);
  auto p1 = predict(m, enc, s, PredictMode::Joint);
  REQUIRE(p1.match_prob > 0.5);
  REQUIRE(p1.match);
  REQUIRE(p1.grounded_id >= 0);
  REQUIRE(p1.box.has_value());
  REQUIRE(p1.mismatched_relation_id == -1);

  // biased low -> mismatch branch
  m.classify_mlp.l2.b->value.setConstant(-4.0);
  auto p2 = predict(m, enc, s, PredictMode::Joint);
  REQUIRE(p2.match_prob < 0.5);
  REQUIRE_FALSE(p2.match);
  REQUIRE(p2.grounded_id == -1);
  REQUIRE(p2.mismatched_relation_id >= 0);

  // oracle mode emits both regardless of the decision
  auto p3 = predict(m, enc, s, PredictMode::Oracle);
  REQUIRE(p3.grounded_id >= 0);
  REQUIRE(p3.box.has_value());
  REQUIRE(p3.mismatched_relation_id >= 0);
  REQUIRE(p3.mode == "oracle");
}
