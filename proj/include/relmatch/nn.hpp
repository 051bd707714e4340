#pragma once

#include <string>
#include <vector>

#include "relmatch/autodiff.hpp"
#include "relmatch/params.hpp"

namespace relmatch::nn {

using ad::Mat;
using ad::Param;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

struct Linear {
  Param* W = nullptr;
  Param* b = nullptr;  // optional

  static Linear create(ParamStore& store, const std::string& name, long in, long out,
                       Rng& rng, int group = 0, bool bias = true) {
    Linear l;
    l.W = &store.create(name + ".W", ad::xavier_uniform(rng, out, in), group);
    if (bias) l.b = &store.create(name + ".b", Mat::Zero(out, 1), group);
    return l;
  }

  Var operator()(Tape& t, Var x) const {
    Var y = ad::matmul(t.param(*W), x);
    if (b) y = ad::add(y, t.param(*b));
    return y;
  }
};

// Two-layer perceptron with ReLU. The hidden bias starts slightly positive so
// no unit is born dead; a fully inactive hidden layer would zero the output
// and cut the gradient for every input.
struct Mlp {
  Linear l1, l2;

  static Mlp create(ParamStore& store, const std::string& name, long in, long hidden,
                    long out, Rng& rng, int group = 0) {
    Mlp m;
    m.l1 = Linear::create(store, name + ".l1", in, hidden, rng, group);
    m.l1.b->value.setConstant(0.1);
    m.l2 = Linear::create(store, name + ".l2", hidden, out, rng, group);
    return m;
  }

  Var operator()(Tape& t, Var x) const { return l2(t, ad::relu(l1(t, x))); }
};

// Single LSTM direction. Gate layout in the stacked weight rows: i, f, g, o.
struct LstmCell {
  Param* Wx = nullptr;
  Param* Wh = nullptr;
  Param* b = nullptr;
  long hidden = 0;

  static LstmCell create(ParamStore& store, const std::string& name, long in, long hidden,
                         Rng& rng, int group = 0) {
    LstmCell c;
    c.hidden = hidden;
    c.Wx = &store.create(name + ".Wx", ad::xavier_uniform(rng, 4 * hidden, in), group);
    c.Wh = &store.create(name + ".Wh", ad::xavier_uniform(rng, 4 * hidden, hidden), group);
    Mat bias = Mat::Zero(4 * hidden, 1);
    bias.middleRows(hidden, hidden).setConstant(1.0);  // forget-gate bias
    c.b = &store.create(name + ".b", std::move(bias), group);
    return c;
  }

  struct State {
    Var h, c;
  };

  State initial(Tape& t) const { return {t.zeros(hidden), t.zeros(hidden)}; }

  State step(Tape& t, Var x, const State& s) const {
    Var z = ad::add(ad::add(ad::matmul(t.param(*Wx), x), ad::matmul(t.param(*Wh), s.h)),
                    t.param(*b));
    Var i = ad::sigmoid(ad::rows(z, 0, hidden));
    Var f = ad::sigmoid(ad::rows(z, hidden, hidden));
    Var g = ad::tanh_(ad::rows(z, 2 * hidden, hidden));
    Var o = ad::sigmoid(ad::rows(z, 3 * hidden, hidden));
    Var c = ad::add(ad::cmul(f, s.c), ad::cmul(i, g));
    Var h = ad::cmul(o, ad::tanh_(c));
    return {h, c};
  }
};

// Bidirectional LSTM over a token sequence. Per-token states and the phrase
// state are concatenations of the two directions, so both have size 2*hidden.
struct BiLstm {
  LstmCell fwd, bwd;

  static BiLstm create(ParamStore& store, const std::string& name, long in, long hidden,
                       Rng& rng, int group = 0) {
    BiLstm b;
    b.fwd = LstmCell::create(store, name + ".fwd", in, hidden, rng, group);
    b.bwd = LstmCell::create(store, name + ".bwd", in, hidden, rng, group);
    return b;
  }

  struct Output {
    std::vector<Var> states;  // per token, 2*hidden
    Var final;                // concat of the two final states
  };

  Output run(Tape& t, const std::vector<Var>& xs) const {
    const std::size_t n = xs.size();
    std::vector<Var> hf(n), hb(n);
    LstmCell::State sf = fwd.initial(t);
    for (std::size_t i = 0; i < n; ++i) {
      sf = fwd.step(t, xs[i], sf);
      hf[i] = sf.h;
    }
    LstmCell::State sb = bwd.initial(t);
    for (std::size_t i = n; i-- > 0;) {
      sb = bwd.step(t, xs[i], sb);
      hb[i] = sb.h;
    }
    Output out;
    out.states.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.states[i] = ad::concat_rows({hf[i], hb[i]});
    out.final = ad::concat_rows({sf.h, sb.h});
    return out;
  }
};

}  // namespace relmatch::nn
