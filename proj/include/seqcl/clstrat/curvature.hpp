#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/ops.hpp"
#include "seqcl/ndgrad/param_vector.hpp"

namespace seqcl {

/// One parameter segment's share of a low-rank factor: U_seg = basis * coef^T,
/// with basis [n_seg x r] and coef [k x r]. An empty coef means U_seg = basis
/// (r == k).
struct LowRankBlock {
  std::size_t segment = 0;
  Tensor basis;
  Tensor coef;

  bool has_coef() const noexcept { return coef.rank() == 2; }
  std::size_t stored_floats() const { return basis.size() + (has_coef() ? coef.size() : 0); }
};

/// U M U^T with U assembled from per-segment blocks and a k x k PSD core M.
struct LowRankTerm {
  std::vector<LowRankBlock> blocks;
  Tensor core;

  std::size_t rank() const noexcept { return core.rows(); }
  std::size_t stored_floats() const {
    std::size_t n = core.size();
    for (const auto& b : blocks) n += b.stored_floats();
    return n;
  }

  /// U^T v for a flat vector v laid out like the parameters.
  std::vector<double> project(const ParamVector& layout, std::span<const double> v) const {
    std::vector<double> z(rank(), 0.0);
    for (const auto& b : blocks) {
      const std::size_t off = layout.offset(b.segment);
      const std::size_t n = b.basis.rows(), r = b.basis.cols();
      std::vector<double> local(r, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < r; ++j) local[j] += b.basis.at(i, j) * v[off + i];
      if (b.has_coef()) {
        for (std::size_t a = 0; a < rank(); ++a)
          for (std::size_t j = 0; j < r; ++j) z[a] += b.coef.at(a, j) * local[j];
      } else {
        for (std::size_t a = 0; a < rank(); ++a) z[a] += local[a];
      }
    }
    return z;
  }

  /// v^T U M U^T v.
  double quadratic(const ParamVector& layout, std::span<const double> v) const {
    const auto z = project(layout, v);
    double q = 0.0;
    for (std::size_t a = 0; a < rank(); ++a)
      for (std::size_t b = 0; b < rank(); ++b) q += z[a] * core.at(a, b) * z[b];
    return q;
  }
};

/// Quadratic penalty state: importance diagonal Ω, optional low-rank terms,
/// anchor θ^t and strength λ.
struct Curvature {
  ParamVector diag;
  std::vector<LowRankTerm> lowrank;
  ParamVector anchor;
  double strength = 0.0;

  bool finalized() const noexcept { return !anchor.empty(); }

  std::size_t stored_floats() const {
    std::size_t n = diag.total_len();
    for (const auto& t : lowrank) n += t.stored_floats();
    return n;
  }
};

/// (λ/2) [ (θ-a)^T diag (θ-a) + Σ_terms (θ-a)^T U M U^T (θ-a) ], recorded on
/// the tape. The curvature must outlive the tape's backward pass.
inline Var quad_penalty(const Curvature& curv, const ParamVars& theta) {
  if (!curv.finalized()) throw ConfigError("quad_penalty: curvature has no anchor");
  if (!theta.source || !curv.anchor.same_layout(*theta.source) || !curv.diag.same_layout(*theta.source)) {
    throw ShapeError("quad_penalty: curvature layout does not match the parameters");
  }
  Tape& tape = theta[0].tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < theta.size(); ++i)
    total = ops::add(total, ops::weighted_sq_dist(theta[i], curv.anchor[i], curv.diag[i]));
  for (const auto& term : curv.lowrank) {
    Var z = tape.constant(Tensor(Shape{term.rank()}, 0.0));
    for (const auto& b : term.blocks) {
      Var local = ops::project_offset(theta[b.segment], curv.anchor[b.segment], b.basis);
      z = ops::add(z, b.has_coef() ? ops::const_matvec(b.coef, local) : local);
    }
    total = ops::add(total, ops::sum(ops::mul(z, ops::const_matvec(term.core, z))));
  }
  return ops::scale(total, 0.5 * curv.strength);
}

/// Same penalty evaluated without a tape.
inline double quad_penalty_value(const Curvature& curv, const ParamVector& theta) {
  if (!curv.finalized()) throw ConfigError("quad_penalty: curvature has no anchor");
  theta.require_layout(curv.anchor, "quad_penalty");
  ParamVector diff = theta;
  diff.axpy(-1.0, curv.anchor);
  double q = 0.0;
  for (std::size_t i = 0; i < diff.num_segments(); ++i) {
    const auto d = diff[i].data();
    const auto w = curv.diag[i].data();
    for (std::size_t j = 0; j < d.size(); ++j) q += w[j] * d[j] * d[j];
  }
  const auto flat = diff.flatten();
  for (const auto& t : curv.lowrank) q += t.quadratic(theta, flat);
  return 0.5 * curv.strength * q;
}

// Reserved checkpoint segment names for persisted curvature state.
inline ParamVector curvature_to_params(const Curvature& curv) {
  ParamVector out;
  out.add("__curv.strength", Tensor::scalar(curv.strength));
  for (const auto& s : curv.diag.segments()) out.add("__curv.diag/" + s.name, s.value);
  for (const auto& s : curv.anchor.segments()) out.add("__curv.anchor/" + s.name, s.value);
  for (std::size_t t = 0; t < curv.lowrank.size(); ++t) {
    const auto& term = curv.lowrank[t];
    const std::string p = "__curv.lr" + std::to_string(t);
    out.add(p + ".core", term.core);
    for (const auto& b : term.blocks) {
      const std::string seg = curv.anchor.segment(b.segment).name;
      out.add(p + ".basis/" + seg, b.basis);
      if (b.has_coef()) out.add(p + ".coef/" + seg, b.coef);
    }
  }
  return out;
}

inline Curvature curvature_from_params(const ParamVector& stored, const ParamVector& layout) {
  Curvature c;
  c.strength = stored.at("__curv.strength").item();
  for (const auto& s : layout.segments()) {
    c.diag.add(s.name, stored.at("__curv.diag/" + s.name));
    c.anchor.add(s.name, stored.at("__curv.anchor/" + s.name));
  }
  layout.require_layout(c.diag, "curvature_from_params");
  for (std::size_t t = 0;; ++t) {
    const std::string p = "__curv.lr" + std::to_string(t);
    const auto& segs = stored.segments();
    const bool present = std::any_of(segs.begin(), segs.end(), [&](const auto& s) { return s.name == p + ".core"; });
    if (!present) break;
    LowRankTerm term;
    term.core = stored.at(p + ".core");
    for (std::size_t i = 0; i < layout.num_segments(); ++i) {
      const std::string seg = layout.segment(i).name;
      const bool has_basis =
          std::any_of(segs.begin(), segs.end(), [&](const auto& s) { return s.name == p + ".basis/" + seg; });
      if (!has_basis) continue;
      LowRankBlock b;
      b.segment = i;
      b.basis = stored.at(p + ".basis/" + seg);
      const bool has_coef =
          std::any_of(segs.begin(), segs.end(), [&](const auto& s) { return s.name == p + ".coef/" + seg; });
      if (has_coef) b.coef = stored.at(p + ".coef/" + seg);
      term.blocks.push_back(std::move(b));
    }
    c.lowrank.push_back(std::move(term));
  }
  return c;
}

}  // namespace seqcl
