#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lbv/errors.hpp"
#include "lbv/tensor.hpp"

namespace lbv {

/// One parameter tensor under check: the live values the objective reads,
/// and the analytic gradient produced by a prior backward pass.
struct GradCheckParam {
  std::string name;
  Tensor<double>* value;
  const Tensor<double>* analytic_grad;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

/// Central-difference check of analytic gradients. `fn` re-evaluates the
/// scalar objective at the current parameter values; relative error per
/// coordinate is |g_a - g_n| / max(|g_a|, |g_n|, 1e-8), maximized over all
/// coordinates of all parameters. Non-finite objective values raise.
inline GradCheckReport grad_check(const std::function<double()>& fn,
                                  const std::vector<GradCheckParam>& params, double eps = 1e-4) {
  GradCheckReport report;
  for (const auto& p : params) {
    if (!p.value->same_shape(*p.analytic_grad))
      throw ShapeError("gradient shape mismatch for " + p.name);
    for (std::int64_t i = 0; i < p.value->size(); ++i) {
      const double saved = (*p.value)[i];
      (*p.value)[i] = saved + eps;
      const double f_plus = fn();
      (*p.value)[i] = saved - eps;
      const double f_minus = fn();
      (*p.value)[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw InternalError("objective returned a non-finite value during grad check");
      const double g_num = (f_plus - f_minus) / (2 * eps);
      const double g_ana = (*p.analytic_grad)[i];
      const double rel =
          std::abs(g_ana - g_num) / std::max({std::abs(g_ana), std::abs(g_num), 1e-8});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = i;
        report.worst_analytic = g_ana;
        report.worst_numeric = g_num;
      }
    }
  }
  return report;
}

}  // namespace lbv
