#pragma once

// Central finite-difference oracle for tape gradients. Independent of the
// backward pass: it only ever evaluates the forward computation.

#include "girl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace girl::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
  std::string worst;
};

// f must build a scalar on the given tape from the current parameter values.
// Central differences; `fourth_order` switches to the five-point stencil,
// which needs a larger eps and suits smooth functions without kinks.
// Relative error per entry is |a - n| / max(|a|, |n|, floor); a difference
// below the stencil's roundoff resolution, 32 * machine eps * |f| / eps,
// counts as zero since no finite-difference estimate can resolve it.
inline GradCheckResult grad_check(const std::function<ad::Var(ad::Tape&)>& f,
                                  const ad::ParamRefs& params, double eps = 1e-5,
                                  double floor = 1e-6, bool fourth_order = false) {
  ad::zero_grads(params);
  {
    ad::Tape tape;
    auto root = f(tape);
    tape.backward(root);
  }
  auto eval = [&] {
    ad::Tape tape;
    return f(tape).scalar();
  };
  const double resolution =
      32.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(eval())) / eps;
  GradCheckResult res;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double x0 = x;
      x = x0 + eps;
      const double fp = eval();
      x = x0 - eps;
      const double fm = eval();
      double numeric = (fp - fm) / (2 * eps);
      if (fourth_order) {
        x = x0 + 2 * eps;
        const double fp2 = eval();
        x = x0 - 2 * eps;
        const double fm2 = eval();
        numeric = (-fp2 + 8 * fp - 8 * fm + fm2) / (12 * eps);
      }
      x = x0;
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
      const double diff = std::abs(numeric - analytic);
      const double rel = diff <= resolution ? 0.0 : diff / denom;
      res.max_abs_grad = std::max(res.max_abs_grad, std::abs(analytic));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace girl::testing
