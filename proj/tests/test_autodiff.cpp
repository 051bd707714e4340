#include <catch2/catch_amalgamated.hpp>

#include "relmatch/autodiff.hpp"
#include "relmatch/gradcheck.hpp"
#include "relmatch/nn.hpp"
#include "relmatch/params.hpp"

using namespace relmatch;
using namespace relmatch::ad;

TEST_CASE("forward values of basic ops") {
  Tape t;
  Var a = t.constant((Mat(2, 1) << 1.0, -2.0).finished());
  Var b = t.constant((Mat(2, 1) << 3.0, 4.0).finished());
  REQUIRE(add(a, b).val()(0) == 4.0);
  REQUIRE(sub(a, b).val()(1) == -6.0);
  REQUIRE(cmul(a, b).val()(1) == -8.0);
  REQUIRE(dot(a, b).scalar() == -5.0);
  REQUIRE(sum(abs_(a)).scalar() == 3.0);
  REQUIRE(max_abs(a).scalar() == 2.0);
  REQUIRE(affine(a, 2.0, 1.0).val()(1) == -3.0);
}

TEST_CASE("softmax and logsumexp agree") {
  Tape t;
  Var x = t.constant((Mat(3, 1) << 0.3, -1.0, 2.0).finished());
  Var s = softmax(x);
  REQUIRE(s.val().sum() == Catch::Approx(1.0).margin(1e-12));
  const double lse = logsumexp(x).scalar();
  for (int i = 0; i < 3; ++i)
    REQUIRE(std::log(s.val()(i)) == Catch::Approx(x.val()(i) - lse).margin(1e-12));
}

TEST_CASE("stop_gradient blocks the path") {
  ParamStore store;
  Rng rng(3);
  Param& w = store.create("w", gaussian_init(rng, 3, 1, 1.0));
  Tape t;
  Var x = t.param(w);
  Var y = sum(cmul(stop_gradient(x), x));  // d/dx should see only the live factor
  t.backward(y);
  const Mat* g = t.param_grad(w);
  REQUIRE(g != nullptr);
  for (int i = 0; i < 3; ++i) REQUIRE((*g)(i, 0) == Catch::Approx(w.value(i, 0)).margin(1e-12));
}

TEST_CASE("gradcheck core op compositions") {
  ParamStore store;
  Rng rng(17);
  Param& A = store.create("A", gaussian_init(rng, 4, 3, 0.7));
  Param& x = store.create("x", gaussian_init(rng, 3, 1, 0.9));
  Param& v = store.create("v", gaussian_init(rng, 4, 1, 0.8));

  SECTION("matmul chain with nonlinearities") {
    auto build = [&](Tape& t) {
      Var y = matmul(t.param(A), t.param(x));
      y = tanh_(y);
      y = add(y, sigmoid(t.param(v)));
      return sum(cmul(y, y));
    };
    auto rep = check_gradients(store.all(), build);
    INFO("max rel " << rep.max_rel);
    REQUIRE(rep.ok());
  }

  SECTION("matmul_tA and scale") {
    auto build = [&](Tape& t) {
      Var y = matmul_tA(t.param(A), t.param(v));  // 3x1
      Var s = dot(t.param(x), y);
      return sum(scale(y, s));
    };
    auto rep = check_gradients(store.all(), build);
    REQUIRE(rep.ok());
  }

  SECTION("l2_normalize, relu, abs, square") {
    auto build = [&](Tape& t) {
      Var y = l2_normalize(t.param(v), 1e-8);
      Var z = relu(add(y, t.param(v)));
      return sum(add(square(z), abs_(t.param(v))));
    };
    auto rep = check_gradients(store.all(), build);
    REQUIRE(rep.ok());
  }

  SECTION("softmax, logsumexp, pick, gather") {
    auto build = [&](Tape& t) {
      Var y = softmax(t.param(v));
      Var g = gather_rows(y, {2, 0, 3});
      Var l = logsumexp(t.param(v));
      return add(add(sum(square(g)), pick(y, 1)), l);
    };
    auto rep = check_gradients(store.all(), build);
    REQUIRE(rep.ok());
  }

  SECTION("log_floor and exp") {
    auto build = [&](Tape& t) {
      Var y = exp_(t.param(x));
      return sum(log_floor(y, 1e-8));
    };
    auto rep = check_gradients(store.all(), build);
    REQUIRE(rep.ok());
  }

  SECTION("divide_by and max_abs") {
    auto build = [&](Tape& t) {
      Var y = t.param(v);
      Var m = max_abs(y);
      return sum(square(divide_by(y, m)));
    };
    auto rep = check_gradients(store.all(), build);
    REQUIRE(rep.ok());
  }

  SECTION("concat, rows, from_entries") {
    auto build = [&](Tape& t) {
      Var y = concat_rows({t.param(x), t.param(v)});
      Var top = rows(y, 1, 3);
      std::vector<Var> entries;
      for (int i = 0; i < 3; ++i) entries.push_back(pick(top, i));
      Var m = from_entries(t, 3, 1, entries);
      return dot(m, t.param(x));
    };
    auto rep = check_gradients(store.all(), build);
    REQUIRE(rep.ok());
  }

  SECTION("smooth_l1 and bce") {
    auto build = [&](Tape& t) {
      Var d = sub(t.param(x), affine(t.param(x), 0.3, 0.2));
      Var p = sigmoid(dot(t.param(x), t.param(x)));
      return add(smooth_l1(d), bce(p, 1.0));
    };
    auto rep = check_gradients(store.all(), build);
    REQUIRE(rep.ok());
  }
}

TEST_CASE("gradcheck lstm and mlp") {
  ParamStore store;
  Rng rng(23);
  auto cell = nn::LstmCell::create(store, "lstm", 3, 4, rng);
  auto mlp = nn::Mlp::create(store, "mlp", 8, 5, 1, rng);
  Param& x0 = store.create("x0", gaussian_init(rng, 3, 1, 0.5));
  Param& x1 = store.create("x1", gaussian_init(rng, 3, 1, 0.5));

  auto build = [&](Tape& t) {
    auto s = cell.initial(t);
    s = cell.step(t, t.param(x0), s);
    s = cell.step(t, t.param(x1), s);
    Var h = concat_rows({s.h, s.c});
    return mlp(t, h);
  };
  auto rep = check_gradients(store.all(), build, 1e-5, 1e-4);
  INFO("max rel " << rep.max_rel);
  REQUIRE(rep.ok());
}

TEST_CASE("bilstm final state is the two directionals concatenated") {
  ParamStore store;
  Rng rng(29);
  auto bi = nn::BiLstm::create(store, "bi", 3, 4, rng);
  Tape t;
  std::vector<Var> xs = {t.constant(gaussian_init(rng, 3, 1, 1.0)),
                         t.constant(gaussian_init(rng, 3, 1, 1.0)),
                         t.constant(gaussian_init(rng, 3, 1, 1.0))};
  auto out = bi.run(t, xs);
  REQUIRE(out.states.size() == 3);
  REQUIRE(out.final.rows() == 8);
  // forward half of final equals last forward state
  REQUIRE(out.final.val().topRows(4) == out.states[2].val().topRows(4));
  // backward half equals the backward state at token 0
  REQUIRE(out.final.val().bottomRows(4) == out.states[0].val().bottomRows(4));
}

TEST_CASE("param node reuse accumulates gradients") {
  ParamStore store;
  Rng rng(31);
  Param& w = store.create("w", gaussian_init(rng, 2, 1, 1.0));
  Tape t;
  Var a = t.param(w);
  Var b = t.param(w);
  REQUIRE(a.id == b.id);
  Var y = add(sum(a), sum(b));
  t.backward(y);
  REQUIRE((*t.param_grad(w))(0, 0) == 2.0);
}

TEST_CASE("adam leaves parameters without gradients untouched") {
  ParamStore store;
  Rng rng(37);
  Param& w = store.create("w", gaussian_init(rng, 2, 1, 1.0));
  Param& u = store.create("u", gaussian_init(rng, 2, 1, 1.0));
  const Mat u0 = u.value;

  Tape t;
  Var y = sum(square(t.param(w)));
  t.backward(y);
  std::vector<Mat> grads(store.count());
  t.add_param_grads(grads);

  Adam opt;
  opt.step(store, grads);
  REQUIRE(u.value == u0);
  REQUIRE(w.value != u0);
}
