#pragma once

#include "seqcl/ndgrad/param_vector.hpp"

namespace seqcl {

struct AgemResult {
  ParamVector grad;
  bool projected = false;
  double dot_before = 0.0;
  double dot_after = 0.0;
};

/// g <- g - (g·g_ref / g_ref·g_ref) g_ref when g·g_ref < 0; otherwise g is
/// returned untouched. A zero reference leaves g unchanged.
inline AgemResult agem_project(const ParamVector& g, const ParamVector& g_ref) {
  g.require_layout(g_ref, "agem_transform");
  AgemResult r{g, false, g.dot(g_ref), 0.0};
  const double rr = g_ref.squared_norm();
  r.dot_after = r.dot_before;
  if (rr == 0.0 || r.dot_before >= 0.0) return r;
  r.projected = true;
  r.grad.axpy(-r.dot_before / rr, g_ref);
  r.dot_after = r.grad.dot(g_ref);
  // Rounding can leave a tiny negative residue; repeat the projection on it.
  for (int i = 0; i < 3 && r.dot_after < 0.0; ++i) {
    r.grad.axpy(-r.dot_after / rr, g_ref);
    r.dot_after = r.grad.dot(g_ref);
  }
  return r;
}

inline ParamVector agem_transform(const ParamVector& g, const ParamVector& g_ref) { return agem_project(g, g_ref).grad; }

}  // namespace seqcl
