#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "relmatch/errors.hpp"

namespace relmatch::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Trainable tensor. Values persist across tapes; gradients are accumulated
// externally (per-tape, then merged by the trainer) so concurrent forward
// passes never write shared state.
struct Param {
  std::string name;
  Mat value;
  Mat adam_m, adam_v;
  int group = 0;   // 0 = reasoning, 1 = token encoder
  int index = -1;  // slot assigned by ParamStore

  Param(std::string n, Mat v, int g)
      : name(std::move(n)), value(std::move(v)), group(g) {
    adam_m = Mat::Zero(value.rows(), value.cols());
    adam_v = Mat::Zero(value.rows(), value.cols());
  }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid when default-constructed.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& val() const;
  double scalar() const;
  long rows() const { return val().rows(); }
  long cols() const { return val().cols(); }
};

// Dynamic reverse-mode tape over dense matrices. Nodes are created in
// topological order; backward() walks them in reverse.
class Tape {
 public:
  struct Node {
    Mat val;
    std::function<void(Tape&, const Mat&)> back;  // null for leaves
  };

  Var constant(Mat v) { return make(std::move(v), nullptr); }

  Var scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  Var zeros(long r, long c = 1) { return constant(Mat::Zero(r, c)); }

  // Leaf bound to a parameter; repeated calls reuse the same node so gradient
  // contributions from every use accumulate in one place.
  Var param(Param& p) {
    auto it = param_lookup_.find(&p);
    if (it != param_lookup_.end()) return Var{this, it->second};
    Var v = make(p.value, nullptr);
    param_lookup_.emplace(&p, v.id);
    param_nodes_.emplace_back(&p, v.id);
    return v;
  }

  void backward(Var out) {
    if (!out.valid() || out.tape != this) throw Error("backward: bad output var");
    if (out.val().size() != 1) throw Error("backward: output must be scalar");
    grads_.assign(nodes_.size(), Mat());
    grads_[out.id] = Mat::Ones(1, 1);
    for (int i = out.id; i >= 0; --i)
      if (grads_[i].size() != 0 && nodes_[i].back) nodes_[i].back(*this, grads_[i]);
  }

  bool has_grad(Var v) const {
    return v.id < static_cast<int>(grads_.size()) && grads_[v.id].size() != 0;
  }

  const Mat& grad(Var v) const {
    static const Mat empty;
    if (!has_grad(v)) return empty;
    return grads_[v.id];
  }

  // Gradient of the last backward() with respect to a parameter, or null if
  // the parameter did not participate.
  const Mat* param_grad(const Param& p) const {
    auto it = param_lookup_.find(&p);
    if (it == param_lookup_.end()) return nullptr;
    if (it->second >= static_cast<int>(grads_.size())) return nullptr;
    const Mat& g = grads_[it->second];
    return g.size() != 0 ? &g : nullptr;
  }

  // Adds scale * dLoss/dParam into sink[param.index] for every touched param.
  void add_param_grads(std::vector<Mat>& sink, double scale = 1.0) const {
    for (const auto& [p, id] : param_nodes_) {
      if (id >= static_cast<int>(grads_.size())) continue;
      const Mat& g = grads_[id];
      if (g.size() == 0) continue;
      Mat& dst = sink[static_cast<std::size_t>(p->index)];
      if (dst.size() == 0)
        dst = scale * g;
      else
        dst += scale * g;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const Mat& val_of(int id) const { return nodes_[id].val; }

  void accum(int id, const Mat& g) {
    Mat& dst = grads_[id];
    if (dst.size() == 0)
      dst = g;
    else
      dst += g;
  }

  Var make(Mat val, std::function<void(Tape&, const Mat&)> back) {
    nodes_.push_back(Node{std::move(val), std::move(back)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  std::vector<std::pair<Param*, int>> param_nodes_;
  std::unordered_map<const Param*, int> param_lookup_;
};

inline const Mat& Var::val() const { return tape->val_of(id); }
inline double Var::scalar() const {
  const Mat& m = val();
  if (m.size() != 1) throw Error("Var::scalar on non-scalar");
  return m(0, 0);
}

namespace detail {
inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error("vars from different tapes");
  return *a.tape;
}
}  // namespace detail

// ----------------------------------------------------------------------------
// Operations
// ----------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("add: shape mismatch");
  const int ia = a.id, ib = b.id;
  return t.make(a.val() + b.val(), [ia, ib](Tape& t, const Mat& g) {
    t.accum(ia, g);
    t.accum(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("sub: shape mismatch");
  const int ia = a.id, ib = b.id;
  return t.make(a.val() - b.val(), [ia, ib](Tape& t, const Mat& g) {
    t.accum(ia, g);
    t.accum(ib, -g);
  });
}

inline Var cmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("cmul: shape mismatch");
  const int ia = a.id, ib = b.id;
  return t.make(a.val().cwiseProduct(b.val()), [ia, ib](Tape& t, const Mat& g) {
    t.accum(ia, g.cwiseProduct(t.val_of(ib)));
    t.accum(ib, g.cwiseProduct(t.val_of(ia)));
  });
}

// k*a + c, elementwise
inline Var affine(Var a, double k, double c) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.make((k * a.val()).array() + c,
                [ia, k](Tape& t, const Mat& g) { t.accum(ia, k * g); });
}

// A * x
inline Var matmul(Var A, Var x) {
  Tape& t = detail::same_tape(A, x);
  if (A.cols() != x.rows()) throw DimensionMismatch("matmul: inner dims");
  const int ia = A.id, ix = x.id;
  return t.make(A.val() * x.val(), [ia, ix](Tape& t, const Mat& g) {
    t.accum(ia, g * t.val_of(ix).transpose());
    t.accum(ix, t.val_of(ia).transpose() * g);
  });
}

// A^T * x
inline Var matmul_tA(Var A, Var x) {
  Tape& t = detail::same_tape(A, x);
  if (A.rows() != x.rows()) throw DimensionMismatch("matmul_tA: inner dims");
  const int ia = A.id, ix = x.id;
  return t.make(A.val().transpose() * x.val(), [ia, ix](Tape& t, const Mat& g) {
    t.accum(ia, t.val_of(ix) * g.transpose());
    t.accum(ix, t.val_of(ia) * g);
  });
}

// elementwise a * s with s scalar-valued
inline Var scale(Var a, Var s) {
  Tape& t = detail::same_tape(a, s);
  if (s.val().size() != 1) throw DimensionMismatch("scale: s must be 1x1");
  const int ia = a.id, is = s.id;
  return t.make(a.val() * s.scalar(), [ia, is](Tape& t, const Mat& g) {
    t.accum(ia, g * t.val_of(is)(0, 0));
    Mat gs(1, 1);
    gs(0, 0) = g.cwiseProduct(t.val_of(ia)).sum();
    t.accum(is, gs);
  });
}

// elementwise a / s with s scalar-valued
inline Var divide_by(Var a, Var s) {
  Tape& t = detail::same_tape(a, s);
  if (s.val().size() != 1) throw DimensionMismatch("divide_by: s must be 1x1");
  const int ia = a.id, is = s.id;
  return t.make(a.val() / s.scalar(), [ia, is](Tape& t, const Mat& g) {
    const double sv = t.val_of(is)(0, 0);
    t.accum(ia, g / sv);
    Mat gs(1, 1);
    gs(0, 0) = -g.cwiseProduct(t.val_of(ia)).sum() / (sv * sv);
    t.accum(is, gs);
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Mat y = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  return t.make(std::move(y), [ia, iy = static_cast<int>(t.size())](Tape& t, const Mat& g) {
    const Mat& y = t.val_of(iy);
    t.accum(ia, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var tanh_(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Mat y = a.val().array().tanh().matrix();
  return t.make(std::move(y), [ia, iy = static_cast<int>(t.size())](Tape& t, const Mat& g) {
    const Mat& y = t.val_of(iy);
    t.accum(ia, (g.array() * (1.0 - y.array() * y.array())).matrix());
  });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.make(a.val().cwiseMax(0.0), [ia](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    t.accum(ia, (g.array() * (x.array() > 0.0).cast<double>()).matrix());
  });
}

inline Var exp_(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Mat y = a.val().array().exp().matrix();
  return t.make(std::move(y), [ia, iy = static_cast<int>(t.size())](Tape& t, const Mat& g) {
    t.accum(ia, (g.array() * t.val_of(iy).array()).matrix());
  });
}

// log(max(a, floor)); entries at the floor get zero gradient
inline Var log_floor(Var a, double floor) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Mat y = a.val().cwiseMax(floor).array().log().matrix();
  return t.make(std::move(y), [ia, floor](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    Mat gx = g;
    for (long j = 0; j < x.cols(); ++j)
      for (long i = 0; i < x.rows(); ++i)
        gx(i, j) = x(i, j) > floor ? g(i, j) / x(i, j) : 0.0;
    t.accum(ia, gx);
  });
}

inline Var square(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.make(a.val().array().square().matrix(), [ia](Tape& t, const Mat& g) {
    t.accum(ia, (2.0 * g.array() * t.val_of(ia).array()).matrix());
  });
}

inline Var abs_(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.make(a.val().cwiseAbs(), [ia](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    t.accum(ia, (g.array() * x.array().sign()).matrix());
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = a.val().sum();
  return t.make(std::move(y), [ia](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    t.accum(ia, Mat::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

inline Var dot(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("dot: shape mismatch");
  const int ia = a.id, ib = b.id;
  Mat y(1, 1);
  y(0, 0) = a.val().cwiseProduct(b.val()).sum();
  return t.make(std::move(y), [ia, ib](Tape& t, const Mat& g) {
    t.accum(ia, g(0, 0) * t.val_of(ib));
    t.accum(ib, g(0, 0) * t.val_of(ia));
  });
}

// max_i |a_i| as a 1x1 node; gradient goes to the first attaining entry
inline Var max_abs(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  const Mat& x = a.val();
  long bi = 0, bj = 0;
  double best = -1.0;
  for (long j = 0; j < x.cols(); ++j)
    for (long i = 0; i < x.rows(); ++i)
      if (std::abs(x(i, j)) > best) {
        best = std::abs(x(i, j));
        bi = i;
        bj = j;
      }
  Mat y(1, 1);
  y(0, 0) = best;
  const double sgn = x(bi, bj) >= 0.0 ? 1.0 : -1.0;
  return t.make(std::move(y), [ia, bi, bj, sgn](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    Mat gx = Mat::Zero(x.rows(), x.cols());
    gx(bi, bj) = sgn * g(0, 0);
    t.accum(ia, gx);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows: empty");
  Tape& t = *parts[0].tape;
  long rows = 0;
  const long cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.tape != &t || p.cols() != cols) throw DimensionMismatch("concat_rows");
    rows += p.rows();
  }
  Mat y(rows, cols);
  std::vector<int> ids;
  std::vector<long> sizes;
  long off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.val();
    ids.push_back(p.id);
    sizes.push_back(p.rows());
    off += p.rows();
  }
  return t.make(std::move(y), [ids, sizes](Tape& t, const Mat& g) {
    long off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      t.accum(ids[k], g.middleRows(off, sizes[k]));
      off += sizes[k];
    }
  });
}

inline Var rows(Var a, long start, long len) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.make(a.val().middleRows(start, len), [ia, start, len](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    Mat gx = Mat::Zero(x.rows(), x.cols());
    gx.middleRows(start, len) = g;
    t.accum(ia, gx);
  });
}

inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Mat y(static_cast<long>(idx.size()), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(static_cast<long>(k)) = a.val().row(idx[k]);
  return t.make(std::move(y), [ia, idx = std::move(idx)](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    Mat gx = Mat::Zero(x.rows(), x.cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      gx.row(idx[k]) += g.row(static_cast<long>(k));
    t.accum(ia, gx);
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.make(a.val().transpose(),
                [ia](Tape& t, const Mat& g) { t.accum(ia, g.transpose()); });
}

inline Var pick(Var a, long i) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = a.val()(i, 0);
  return t.make(std::move(y), [ia, i](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    Mat gx = Mat::Zero(x.rows(), x.cols());
    gx(i, 0) = g(0, 0);
    t.accum(ia, gx);
  });
}

// Column-vector matrix assembled from 1x1 nodes, row-major entry order.
inline Var from_entries(Tape& t, long r, long c, const std::vector<Var>& entries) {
  if (static_cast<long>(entries.size()) != r * c) throw DimensionMismatch("from_entries");
  Mat y(r, c);
  std::vector<int> ids(entries.size());
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) {
      const auto& e = entries[static_cast<std::size_t>(i * c + j)];
      if (e.tape != &t) throw Error("from_entries: wrong tape");
      y(i, j) = e.scalar();
      ids[static_cast<std::size_t>(i * c + j)] = e.id;
    }
  return t.make(std::move(y), [ids, c](Tape& t, const Mat& g) {
    Mat g1(1, 1);
    for (long i = 0; i < g.rows(); ++i)
      for (long j = 0; j < g.cols(); ++j) {
        g1(0, 0) = g(i, j);
        t.accum(ids[static_cast<std::size_t>(i * c + j)], g1);
      }
  });
}

// x / max(||x||_2, eps); zero vectors map to (near-)zero output
inline Var l2_normalize(Var a, double eps) {
  Tape& t = *a.tape;
  const int ia = a.id;
  const double r = a.val().norm();
  const double denom = std::max(r, eps);
  Mat y = a.val() / denom;
  const bool active = r >= eps;
  return t.make(std::move(y),
                [ia, denom, active, iy = static_cast<int>(t.size())](Tape& t, const Mat& g) {
    const Mat& y = t.val_of(iy);
    if (active) {
      const double yd = g.cwiseProduct(y).sum();
      t.accum(ia, (g - yd * y) / denom);
    } else {
      t.accum(ia, g / denom);
    }
  });
}

inline Var softmax(Var a) {
  Tape& t = *a.tape;
  if (a.cols() != 1) throw DimensionMismatch("softmax: column vector expected");
  const int ia = a.id;
  const double m = a.val().maxCoeff();
  Eigen::ArrayXd e = (a.val().array() - m).exp();
  Mat y = (e / e.sum()).matrix();
  return t.make(std::move(y), [ia, iy = static_cast<int>(t.size())](Tape& t, const Mat& g) {
    const Mat& y = t.val_of(iy);
    const double yd = g.cwiseProduct(y).sum();
    t.accum(ia, (y.array() * (g.array() - yd)).matrix());
  });
}

inline Var logsumexp(Var a) {
  Tape& t = *a.tape;
  if (a.cols() != 1) throw DimensionMismatch("logsumexp: column vector expected");
  const int ia = a.id;
  const double m = a.val().maxCoeff();
  const double s = (a.val().array() - m).exp().sum();
  Mat y(1, 1);
  y(0, 0) = m + std::log(s);
  Mat soft = ((a.val().array() - m).exp() / s).matrix();
  return t.make(std::move(y), [ia, soft = std::move(soft)](Tape& t, const Mat& g) {
    t.accum(ia, g(0, 0) * soft);
  });
}

inline Var stop_gradient(Var a) {
  Tape& t = *a.tape;
  return t.make(a.val(), nullptr);
}

// Summed Huber penalty: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
inline Var smooth_l1(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  double total = 0.0;
  const Mat& x = a.val();
  for (long j = 0; j < x.cols(); ++j)
    for (long i = 0; i < x.rows(); ++i) {
      const double v = std::abs(x(i, j));
      total += v < 1.0 ? 0.5 * v * v : v - 0.5;
    }
  Mat y(1, 1);
  y(0, 0) = total;
  return t.make(std::move(y), [ia](Tape& t, const Mat& g) {
    const Mat& x = t.val_of(ia);
    Mat gx(x.rows(), x.cols());
    for (long j = 0; j < x.cols(); ++j)
      for (long i = 0; i < x.rows(); ++i) {
        const double v = x(i, j);
        gx(i, j) = g(0, 0) * (std::abs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0));
      }
    t.accum(ia, gx);
  });
}

// Binary cross-entropy of probability p against a hard label.
inline Var bce(Var p, double label, double floor = 1e-12) {
  Var lp = log_floor(p, floor);
  Var lq = log_floor(affine(p, -1.0, 1.0), floor);
  return affine(add(scale(lp, p.tape->scalar(label)),
                    scale(lq, p.tape->scalar(1.0 - label))),
                -1.0, 0.0);
}

// Minimum over scalar vars; no new node, returns the attaining var (first on ties).
inline Var min_of(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("min_of: empty");
  Var best = xs[0];
  for (const auto& v : xs)
    if (v.scalar() < best.scalar()) best = v;
  return best;
}

}  // namespace relmatch::ad
