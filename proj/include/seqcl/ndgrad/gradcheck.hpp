#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/param_vector.hpp"

namespace seqcl {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat index of the worst coordinate
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backward() against central differences on every coordinate of θ.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <class F>
GradCheckResult finite_diff_check(F&& f, const ParamVector& theta, double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  const ParamVector analytic = grad(theta, f);
  const std::vector<double> g = analytic.flatten();
  std::vector<double> flat = theta.flatten();

  GradCheckResult res;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + eps;
    const double fp = evaluate(theta.unflatten(flat), f);
    flat[i] = orig - eps;
    const double fm = evaluate(theta.unflatten(flat), f);
    flat[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("finite_diff_check: non-finite f");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(g[i] - numeric) / denom;
    if (rel > res.max_rel_error || i == 0) {
      res.max_rel_error = rel;
      res.worst_index = i;
      res.analytic = g[i];
      res.numeric = numeric;
    }
  }
  return res;
}

}  // namespace seqcl
