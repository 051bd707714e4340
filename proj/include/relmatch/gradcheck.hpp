#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "relmatch/autodiff.hpp"
#include "relmatch/params.hpp"

namespace relmatch::ad {

struct GradCheckFailure {
  std::string param;
  long row = 0, col = 0;
  double analytic = 0.0, fd = 0.0, rel = 0.0;
};

struct GradCheckReport {
  long checked = 0;
  double max_rel = 0.0;
  std::vector<GradCheckFailure> failures;
  bool ok() const { return failures.empty(); }
};

// Central finite differences against the tape gradients. An entry passes when
// |analytic - fd| <= tol * max(|analytic|, |fd|), or when both magnitudes sit
// below `floor` (the relative error of two near-zero numbers is noise).
inline GradCheckReport check_gradients(const std::vector<Param*>& params,
                                       const std::function<Var(Tape&)>& build,
                                       double step = 1e-5, double tol = 1e-4,
                                       double floor = 1e-6) {
  GradCheckReport report;

  Tape base;
  Var out = build(base);
  base.backward(out);

  auto eval = [&]() {
    Tape t;
    return build(t).scalar();
  };

  for (Param* p : params) {
    const Mat* ga = base.param_grad(*p);
    for (long c = 0; c < p->value.cols(); ++c) {
      for (long r = 0; r < p->value.rows(); ++r) {
        const double saved = p->value(r, c);
        const double h = step * std::max(1.0, std::abs(saved));
        p->value(r, c) = saved + h;
        const double y1 = eval();
        p->value(r, c) = saved - h;
        const double y2 = eval();
        p->value(r, c) = saved;
        const double fd = (y1 - y2) / (2.0 * h);
        const double an = ga ? (*ga)(r, c) : 0.0;
        ++report.checked;
        const double denom = std::max(std::abs(an), std::abs(fd));
        if (denom < floor) continue;
        const double rel = std::abs(an - fd) / denom;
        report.max_rel = std::max(report.max_rel, rel);
        if (rel >= tol) report.failures.push_back({p->name, r, c, an, fd, rel});
      }
    }
  }
  return report;
}

}  // namespace relmatch::ad
