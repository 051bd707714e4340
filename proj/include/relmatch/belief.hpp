#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "relmatch/autodiff.hpp"
#include "relmatch/nn.hpp"

namespace relmatch::belief {

using ad::Param;
using ad::Tape;
using ad::Var;

// A correspondence belief: one value per visual proposal in the index map.
// The map stays injective; values are kept in [0,1] by the normalizing ops.
struct Belief {
  Eigen::VectorXd values;
  std::vector<int> ids;
};

struct BeliefVar {
  Var values;
  std::vector<int> ids;

  Belief snapshot() const {
    Belief b;
    b.values = values.val().col(0);
    b.ids = ids;
    return b;
  }
};

enum class NormMode { Unit, SignedToUnit };

inline void require_same_ids(const std::vector<int>& a, const std::vector<int>& b,
                             const char* where) {
  if (a != b) throw IndexSetMismatch(std::string(where) + ": beliefs on different index sets");
}

// ---------------------------------------------------------------------------
// Similarity machinery
// ---------------------------------------------------------------------------

// L2-normalized MLP embedding; zero MLP output stays (near) zero.
inline Var f_trf(Tape& t, const nn::Mlp& mlp, Var x, double eps = 1e-8) {
  return ad::l2_normalize(mlp(t, x), eps);
}

struct SimEntParams {
  nn::Mlp trf;
  Param* W_sim = nullptr;
  Param* W_eval = nullptr;

  static SimEntParams create(ad::ParamStore& store, const std::string& name, long in,
                             long embed, Rng& rng, int group = 0) {
    SimEntParams p;
    p.trf = nn::Mlp::create(store, name + ".trf", in, embed, embed, rng, group);
    p.W_sim = &store.create(name + ".W_sim", ad::xavier_uniform(rng, embed, embed), group);
    p.W_eval = &store.create(name + ".W_eval", ad::xavier_uniform(rng, embed, 1), group);
    return p;
  }
};

// Entity-space similarity on already-transformed unit vectors.
inline Var sim_ent_pre(Tape& t, const SimEntParams& p, Var fx, Var fy, double eps = 1e-8) {
  Var u = ad::matmul(t.param(*p.W_sim), ad::square(ad::sub(fx, fy)));
  Var un = ad::relu(ad::l2_normalize(u, eps));
  return ad::tanh_(ad::dot(t.param(*p.W_eval), un));
}

// tanh(W_eval^T ReLU(W_sim^T |trf(x) - trf(y)|^2 / ||.||)); range [-1, 1].
inline Var sim_ent(Tape& t, const SimEntParams& p, Var x, Var y, double eps = 1e-8) {
  if (x.rows() != y.rows()) throw DimensionMismatch("sim_ent: input dims differ");
  return sim_ent_pre(t, p, f_trf(t, p.trf, x, eps), f_trf(t, p.trf, y, eps), eps);
}

struct SimRelParams {
  nn::Mlp trf;  // shared by the linguistic and visual relation features

  static SimRelParams create(ad::ParamStore& store, const std::string& name, long in,
                             long embed, Rng& rng, int group = 0) {
    SimRelParams p;
    p.trf = nn::Mlp::create(store, name + ".trf", in, embed, embed, rng, group);
    return p;
  }
};

inline Var sim_rel_pre(Tape& t, Var fx, Var fy) {
  (void)t;
  return ad::relu(ad::dot(fx, fy));
}

// ReLU(<trf(rE), trf(rO)>); range [0, 1].
inline Var sim_rel(Tape& t, const SimRelParams& p, Var rE, Var rO, double eps = 1e-8) {
  if (rE.rows() != rO.rows()) throw DimensionMismatch("sim_rel: input dims differ");
  return sim_rel_pre(t, f_trf(t, p.trf, rE, eps), f_trf(t, p.trf, rO, eps));
}

// ---------------------------------------------------------------------------
// Normalization, gating, selection, aggregation, classification
// ---------------------------------------------------------------------------

// Rescale into [-1,1] by the max absolute value when it exceeds 1; the
// signed-to-unit mode then maps the result linearly onto [0,1].
inline Var f_norm(Var v, NormMode mode) {
  Var m = ad::max_abs(v);
  Var out = v;
  if (m.scalar() > 1.0) out = ad::divide_by(out, m);
  if (mode == NormMode::SignedToUnit) out = ad::affine(out, 0.5, 0.5);
  return out;
}

struct GatePart {
  Param* W = nullptr;
  BeliefVar b;
};

// F_norm(sum_t sigmoid(W_t^T g) * b_t) with the signed-to-unit mapping; g is
// the shared gate input of the node.
inline BeliefVar gate_sum(Tape& t, Var gate_input, const std::vector<GatePart>& parts,
                          std::vector<double>* betas_out = nullptr) {
  if (parts.empty()) throw Error("gate_sum: no parts");
  for (std::size_t i = 1; i < parts.size(); ++i)
    require_same_ids(parts[0].b.ids, parts[i].b.ids, "gate_sum");
  Var acc;
  for (const auto& part : parts) {
    Var beta = ad::sigmoid(ad::dot(t.param(*part.W), gate_input));
    if (betas_out) betas_out->push_back(beta.scalar());
    Var term = ad::scale(part.b.values, beta);
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  return {f_norm(acc, NormMode::SignedToUnit), parts[0].b.ids};
}

// Positions of the K largest values; ties prefer the lower proposal id, and
// survivors keep their original order.
inline std::vector<int> top_k_positions(const Eigen::VectorXd& values,
                                        const std::vector<int>& ids, int k) {
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  std::sort(pos.begin(), pos.end(), [&](int a, int b) {
    if (values(a) != values(b)) return values(a) > values(b);
    return ids[a] < ids[b];
  });
  pos.resize(std::min<std::size_t>(pos.size(), static_cast<std::size_t>(k)));
  std::sort(pos.begin(), pos.end());
  return pos;
}

inline BeliefVar select_topk(const BeliefVar& b, int k) {
  if (k < 1) throw Error("select_topk: K must be >= 1");
  if (static_cast<int>(b.ids.size()) <= k) return b;
  const auto pos = top_k_positions(b.values.val().col(0), b.ids, k);
  BeliefVar out;
  out.values = ad::gather_rows(b.values, pos);
  out.ids.reserve(pos.size());
  for (int p : pos) out.ids.push_back(b.ids[p]);
  return out;
}

// Soft-AND across child messages, computed in log space with an epsilon floor.
inline BeliefVar aggregate_messages(Tape& t, const std::vector<Var>& messages,
                                    std::vector<int> ids, double eps = 1e-8) {
  if (messages.empty()) throw Error("aggregate: no messages");
  Var acc;
  for (const auto& m : messages) {
    if (m.rows() != static_cast<long>(ids.size()))
      throw IndexSetMismatch("aggregate: message length mismatch");
    Var lg = ad::log_floor(m, eps);
    acc = acc.valid() ? ad::add(acc, lg) : lg;
  }
  return {ad::exp_(acc), std::move(ids)};
}

// Spec-shaped entry point: children as (alignment, belief) pairs with the
// alignment rows on the parent index set and columns on the child's.
inline BeliefVar aggregate(Tape& t,
                           const std::vector<std::pair<Var, BeliefVar>>& children,
                           std::vector<int> parent_ids, double eps = 1e-8) {
  std::vector<Var> messages;
  for (const auto& [A, b] : children) {
    if (A.cols() != static_cast<long>(b.ids.size()))
      throw IndexSetMismatch("aggregate: alignment columns != child index set");
    if (A.rows() != static_cast<long>(parent_ids.size()))
      throw IndexSetMismatch("aggregate: alignment rows != parent index set");
    messages.push_back(ad::matmul(A, b.values));
  }
  return aggregate_messages(t, messages, std::move(parent_ids), eps);
}

// F_norm(b_loc o b_agg^beta) with beta = sigmoid(W_rel^T g); the power is
// taken in log space with the same floor as aggregation.
inline BeliefVar gate_prod(Tape& t, const BeliefVar& loc, const BeliefVar& agg,
                           Var gate_input, Param& W_rel, double eps = 1e-8,
                           std::optional<double> beta_override = std::nullopt,
                           double* beta_out = nullptr) {
  require_same_ids(loc.ids, agg.ids, "gate_prod");
  Var beta = beta_override ? t.scalar(*beta_override)
                           : ad::sigmoid(ad::dot(t.param(W_rel), gate_input));
  if (beta_out) *beta_out = beta.scalar();
  Var powered = ad::exp_(ad::scale(ad::log_floor(agg.values, eps), beta));
  return {f_norm(ad::cmul(loc.values, powered), NormMode::Unit), loc.ids};
}

// Match confidence of a belief: sort descending, fit to length K (zero pad or
// truncate), then a small MLP with a sigmoid head. Invariant to permutations
// of the input by construction.
inline Var classify(Tape& t, const BeliefVar& b, int k, const nn::Mlp& mlp) {
  if (b.ids.empty()) throw Error("classify: empty belief");
  std::vector<int> pos(b.ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  const Eigen::VectorXd vals = b.values.val().col(0);
  std::sort(pos.begin(), pos.end(), [&](int a, int c) {
    if (vals(a) != vals(c)) return vals(a) > vals(c);
    return b.ids[a] < b.ids[c];
  });
  pos.resize(std::min<std::size_t>(pos.size(), static_cast<std::size_t>(k)));
  Var sorted = ad::gather_rows(b.values, pos);
  if (static_cast<int>(pos.size()) < k)
    sorted = ad::concat_rows({sorted, t.zeros(k - static_cast<int>(pos.size()))});
  return ad::sigmoid(mlp(t, sorted));
}

}  // namespace relmatch::belief
