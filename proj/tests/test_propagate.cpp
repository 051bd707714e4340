#include <catch2/catch_amalgamated.hpp>

#include "relmatch/readout.hpp"
#include "relmatch/replay.hpp"
#include "support/fixtures.hpp"

using namespace relmatch;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Model tiny_model(std::uint64_t seed = 42) {
  return Model::create(testing::tiny_config(), testing::tiny_vocab(), seed);
}

LanguageSceneGraph chain(int n) {
  LanguageSceneGraph g;
  for (int i = 0; i < n; ++i) g.entities.push_back({i, {"cube"}});
  for (int i = 1; i < n; ++i) g.relations.push_back({i - 1, i - 1, i, {"near"}});
  g.root = 0;
  return g;
}

// Hand-assembled inputs: constant local beliefs, gate inputs and alignments.
struct ManualInputs {
  BeliefInputs inputs;
  std::map<int, Mat> alignments;  // relation index -> full matrix over all ids

  static ManualInputs build(Tape& t, const std::vector<Eigen::VectorXd>& locals,
                            std::map<int, Mat> aligns, int gate_dim = 4) {
    ManualInputs mi;
    mi.alignments = std::move(aligns);
    for (const auto& l : locals) {
      NodeInputs n;
      std::vector<int> ids;
      for (int j = 0; j < l.size(); ++j) ids.push_back(j);
      n.local = belief::BeliefVar{t.constant(l), ids};
      n.b_app = t.constant(Eigen::VectorXd::Zero(l.size()));
      n.b_pos = t.constant(Eigen::VectorXd::Zero(l.size()));
      n.gate_input = t.constant(Eigen::VectorXd::Ones(gate_dim));
      mi.inputs.nodes.push_back(n);
    }
    auto* owned = &mi.alignments;
    mi.inputs.alignment = [&t, owned](int rel, const std::vector<int>& rows,
                                      const std::vector<int>& cols,
                                      ProgramTrace*) -> Var {
      const Mat& full = owned->at(rel);
      Mat sub(rows.size(), cols.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
          sub(static_cast<long>(i), static_cast<long>(j)) =
              full(rows[i], cols[j]);
      return t.constant(sub);
    };
    return mi;
  }
};

PropagationParams manual_params(ad::ParamStore& store, const nn::Mlp* cls = nullptr) {
  Rng rng(3);
  PropagationParams p;
  p.w_rel_bp = store.find("w_bp") ? store.find("w_bp")
                                  : &store.create("w_bp", ad::gaussian_init(rng, 4, 1, 0.5));
  p.w_rel_td = store.find("w_td") ? store.find("w_td")
                                  : &store.create("w_td", ad::gaussian_init(rng, 4, 1, 0.5));
  p.classify = cls;
  return p;
}

}  // namespace

TEST_CASE("propagation order on a chain") {
  const auto g = chain(3);
  const auto tree = TreeIndex::build(g);
  REQUIRE(propagation_order(tree, Direction::BottomUp) == std::vector<int>{2, 1, 0});
  REQUIRE(propagation_order(tree, Direction::TopDown) == std::vector<int>{0, 1, 2});
}

TEST_CASE("propagation order on a single node") {
  const auto g = chain(1);
  const auto tree = TreeIndex::build(g);
  REQUIRE(propagation_order(tree, Direction::BottomUp) == std::vector<int>{0});
  REQUIRE(propagation_order(tree, Direction::TopDown) == std::vector<int>{0});
}

TEST_CASE("single-node graph: beliefs equal the local belief in both directions") {
  ad::ParamStore store;
  Rng rng(5);
  auto cls = nn::Mlp::create(store, "cls", 3, 4, 1, rng);
  Tape t;
  Eigen::VectorXd local(3);
  local << 0.2, 0.9, 0.4;
  auto mi = ManualInputs::build(t, {local}, {});
  const auto tree = TreeIndex::build(chain(1));

  PropagationConfig cfg;
  cfg.task = Task::Matching;
  cfg.K = 3;
  auto r = propagate(t, tree, mi.inputs, manual_params(store, &cls), cfg);

  for (Direction d : {Direction::BottomUp, Direction::TopDown}) {
    REQUIRE(r.beliefs.at(d)[0].values == local);
    // confidence equals classify of the local belief
    Tape t2;
    belief::BeliefVar b{t2.constant(local), {0, 1, 2}};
    REQUIRE(r.confidences.at(d)[0] == belief::classify(t2, b, 3, cls).scalar());
  }
}

TEST_CASE("gate-closed propagation reduces to the local beliefs") {
  Model m = tiny_model();
  TableEncoder enc;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    const auto s = testing::chain_sample(3, 5, seed);
    Tape t;
    ForwardRequest req;
    req.opts.beta_rel_override = 0.0;
    auto fw = run_forward(t, m, enc, s, req);
    const int n = s.graph.entity_count();
    for (int i = 0; i < n; ++i) {
      // grounding pass keeps full index sets
      REQUIRE(fw.grounding->beliefs.at(Direction::BottomUp)[i].values ==
              fw.grounding->local[i].values);
      // matching pass reduces to the top-K restriction of the local belief
      Tape t2;
      belief::BeliefVar loc{t2.constant(fw.matching->local[i].values),
                            fw.matching->local[i].ids};
      auto expect = belief::select_topk(loc, m.cfg.K);
      REQUIRE(fw.matching->beliefs.at(Direction::BottomUp)[i].ids == expect.ids);
      REQUIRE(fw.matching->beliefs.at(Direction::BottomUp)[i].values ==
              expect.values.val().col(0));
      REQUIRE(fw.matching->beliefs.at(Direction::TopDown)[i].values ==
              expect.values.val().col(0));
    }
  }
}

TEST_CASE("hand-set similarities: only consistent proposal chain survives") {
  // Chain root->a->b over 3 proposals, K = 3. Locals are uninformative at the
  // root, mildly informative below; alignments only support the chain 0-1-2.
  Tape t;
  Eigen::VectorXd l0(3), l1(3), l2(3);
  l0 << 0.5, 0.5, 0.5;
  l1 << 0.6, 0.5, 0.4;
  l2 << 0.4, 0.5, 0.6;
  Mat a01(3, 3), a12(3, 3);
  // rows = parent proposal, cols = child proposal
  a01 << 0.0, 0.9, 0.1, 0.1, 0.0, 0.1, 0.1, 0.1, 0.0;
  a12 << 0.0, 0.1, 0.9, 0.1, 0.0, 0.1, 0.0, 0.1, 0.0;
  auto mi = ManualInputs::build(t, {l0, l1, l2}, {{0, a01}, {1, a12}});

  ad::ParamStore store;
  PropagationConfig cfg;
  cfg.task = Task::Grounding;
  cfg.K = 3;
  cfg.beta_rel_override = 1.0;  // fully open gate for the hand check
  const auto tree = TreeIndex::build(chain(3));
  auto r = propagate(t, tree, mi.inputs, manual_params(store), cfg);

  // Independent evaluation of the same update equations with plain algebra.
  auto fnorm_unit = [](Eigen::VectorXd v) {
    const double m = v.cwiseAbs().maxCoeff();
    if (m > 1.0) v /= m;
    return v;
  };
  const double eps = cfg.eps;
  Eigen::VectorXd b2 = l2;
  Eigen::VectorXd msg12 = (a12 * b2).cwiseMax(eps);
  Eigen::VectorXd b1 = fnorm_unit(l1.cwiseProduct(msg12));
  Eigen::VectorXd msg01 = (a01 * b1).cwiseMax(eps);
  Eigen::VectorXd b0 = fnorm_unit(l0.cwiseProduct(msg01));

  const auto& got = r.beliefs.at(Direction::BottomUp);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(got[0].values(i) == Catch::Approx(b0(i)).margin(1e-12));
    REQUIRE(got[1].values(i) == Catch::Approx(b1(i)).margin(1e-12));
  }
  // only proposal 0 at the root is supported by the chain 0 -> 1 -> 2
  int argmax = 0;
  for (int i = 1; i < 3; ++i)
    if (got[0].values(i) > got[0].values(argmax)) argmax = i;
  REQUIRE(argmax == 0);
}

TEST_CASE("zero evidence from one child suppresses the parent") {
  // Parent with two children; child 1's message carries a zero.
  Tape t;
  Eigen::VectorXd loc = Eigen::VectorXd::Constant(3, 1.0);
  Mat a_ok = Mat::Identity(3, 3);
  auto run = [&](bool zero_child) {
    Tape tt;
    Eigen::VectorXd c1(3), c2(3);
    c1 << 1.0, 1.0, 1.0;
    c2 << 1.0, zero_child ? 0.0 : 1.0, 1.0;
    LanguageSceneGraph g;
    g.entities = {{0, {"a"}}, {1, {"b"}}, {2, {"c"}}};
    g.relations = {{0, 0, 1, {"r"}}, {1, 0, 2, {"s"}}};
    g.root = 0;
    auto mi = ManualInputs::build(tt, {loc, c1, c2}, {{0, a_ok}, {1, a_ok}});
    ad::ParamStore store;
    PropagationConfig cfg;
    cfg.task = Task::Grounding;
    cfg.K = 3;
    cfg.beta_rel_override = 1.0;
    auto r = propagate(tt, TreeIndex::build(g), mi.inputs, manual_params(store), cfg);
    return r.beliefs.at(Direction::BottomUp)[0].values;
  };
  const auto with_zero = run(true);
  const auto without = run(false);
  // the zeroed entry collapses to (near) the floor and never exceeds the
  // single-child bound
  REQUIRE(with_zero(1) <= 3.0 * 1e-8);
  for (int i = 0; i < 3; ++i) REQUIRE(with_zero(i) <= without(i) + 1e-15);
}

TEST_CASE("propagation is bit-deterministic") {
  Model m = tiny_model(7);
  TableEncoder enc;
  const auto s = testing::chain_sample(3, 6, 91);
  auto run = [&]() {
    Tape t;
    auto fw = run_forward(t, m, enc, s);
    std::vector<double> out;
    for (const auto& [d, confs] : fw.matching->confidences)
      out.insert(out.end(), confs.begin(), confs.end());
    for (const auto& b : fw.matching->beliefs.at(Direction::BottomUp))
      for (int i = 0; i < b.values.size(); ++i) out.push_back(b.values(i));
    out.push_back(fw.p_match.scalar());
    return out;
  };
  REQUIRE(run() == run());
}

TEST_CASE("trace records the program and replays exactly") {
  Model m = tiny_model(9);
  TableEncoder enc;
  const auto s = testing::chain_sample(3, 5, 17);
  Tape t;
  ProgramTrace trace;
  ForwardRequest req;
  req.opts.trace = &trace;
  auto fw = run_forward(t, m, enc, s, req);

  REQUIRE(!trace.steps.empty());
  bool has_gatesum = false, has_select = false, has_agg = false, has_gateprod = false,
       has_classify = false, has_and = false;
  for (const auto& st : trace.steps) {
    has_gatesum |= st.module == "GateSum";
    has_select |= st.module == "Select";
    has_agg |= st.module == "Aggregate";
    has_gateprod |= st.module == "GateProd";
    has_classify |= st.module == "Classify";
    has_and |= st.module == "And";
  }
  REQUIRE(has_gatesum);
  REQUIRE(has_select);
  REQUIRE(has_agg);
  REQUIRE(has_gateprod);
  REQUIRE(has_classify);
  REQUIRE(has_and);

  auto res = replay_trace(trace, m);
  INFO("checked " << res.checked << " steps, max diff " << res.max_diff << " first "
                  << res.first_mismatch);
  REQUIRE(res.ok);
  REQUIRE(res.checked > 50);

  // trace export carries the step list
  const auto j = trace_to_json(trace, false);
  REQUIRE(j.size() == trace.steps.size());
}

TEST_CASE("gate inputs can be frozen and recorded") {
  Model m = tiny_model(13);
  TableEncoder enc;
  const auto s = testing::chain_sample(2, 4, 21);

  std::vector<Eigen::VectorXd> bank;
  Tape t1;
  ForwardRequest rec;
  rec.opts.record_gate_inputs = &bank;
  auto fw1 = run_forward(t1, m, enc, s, rec);
  REQUIRE(bank.size() == 2);

  // Frozen run reproduces the same forward values.
  Tape t2;
  ForwardRequest froz;
  froz.opts.frozen_gate_inputs = &bank;
  auto fw2 = run_forward(t2, m, enc, s, froz);
  REQUIRE(fw1.p_match.scalar() == fw2.p_match.scalar());

  // Altering a frozen gate input changes the gating (beta responds), even
  // though no gradient flows through that path.
  auto bank2 = bank;
  bank2[0].setConstant(2.5);
  Tape t3;
  ForwardRequest froz2;
  froz2.opts.frozen_gate_inputs = &bank2;
  auto fw3 = run_forward(t3, m, enc, s, froz2);
  REQUIRE(fw3.p_match.scalar() != fw1.p_match.scalar());
}
