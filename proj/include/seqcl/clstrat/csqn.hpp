#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "seqcl/clstrat/curvature.hpp"
#include "seqcl/error.hpp"
#include "seqcl/ndgrad/param_vector.hpp"

namespace seqcl {

/// Limited-memory SR1 matrix in compact form B = diag(b0) + Σ_j m_j u_j u_j^T,
/// built by sequential SR1 updates. Pairs that fail the denominator safeguard
/// are skipped.
struct Sr1Compact {
  std::vector<double> b0;
  std::vector<std::vector<double>> u;
  std::vector<double> m;              // raw coefficients 1 / (s^T u)
  std::vector<std::size_t> retained;  // indices of accepted pairs

  std::vector<double> apply(std::span<const double> v, bool clamp_psd = false) const {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = b0[i] * v[i];
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double mj = clamp_psd ? std::max(m[j], 0.0) : m[j];
      if (mj == 0.0) continue;
      double dot = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += u[j][i] * v[i];
      for (std::size_t i = 0; i < v.size(); ++i) out[i] += mj * dot * u[j][i];
    }
    return out;
  }
};

struct Sr1Options {
  double safeguard = 1e-8;    // |s^T r| >= safeguard * |s| |r|
  double residual_tol = 1e-10;  // skip when |y - B s| <= residual_tol * |y| (secant already holds)
};

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Sr1Compact sr1_compact(std::vector<double> b0, const std::vector<std::vector<double>>& s,
                              const std::vector<std::vector<double>>& y, const Sr1Options& opt = {}) {
  if (s.size() != y.size()) throw ShapeError("sr1_compact: pair count mismatch");
  Sr1Compact b;
  b.b0 = std::move(b0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k].size() != b.b0.size() || y[k].size() != b.b0.size()) throw ShapeError("sr1_compact: pair dimension mismatch");
    const auto bs = b.apply(s[k]);
    std::vector<double> r(bs.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = y[k][i] - bs[i];
    const double rn = norm2(r), sn = norm2(s[k]);
    if (rn <= opt.residual_tol * norm2(y[k])) continue;
    double sr = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) sr += s[k][i] * r[i];
    if (std::abs(sr) < opt.safeguard * sn * rn) continue;
    b.u.push_back(std::move(r));
    b.m.push_back(1.0 / sr);
    b.retained.push_back(k);
  }
  return b;
}

/// Splits the SR1 update vectors into per-segment blocks with a diagonal core
/// clamped to its positive part.
inline LowRankTerm lowrank_from_sr1(const Sr1Compact& sr1, const ParamVector& layout) {
  const std::size_t k = sr1.u.size();
  LowRankTerm term;
  term.core = Tensor::matrix(k, k);
  for (std::size_t j = 0; j < k; ++j) term.core.at(j, j) = std::max(sr1.m[j], 0.0);
  for (std::size_t s = 0; s < layout.num_segments(); ++s) {
    const std::size_t off = layout.offset(s), n = layout[s].size();
    LowRankBlock b;
    b.segment = s;
    b.basis = Tensor::matrix(n, k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) b.basis.at(i, j) = sr1.u[j][off + i];
    term.blocks.push_back(std::move(b));
  }
  return term;
}

struct CsqnOptions {
  std::size_t pairs = 10;  // K
  double epsilon = 1e-8;   // added to the base diagonal of B0
  Sr1Options sr1;
};

/// Empirical-Fisher-vector product (1/|B|) Σ_b (g_b · s) g_b.
inline std::vector<double> fisher_vector_product(const std::vector<std::vector<double>>& grads, std::span<const double> s) {
  std::vector<double> y(s.size(), 0.0);
  for (const auto& g : grads) {
    double dot = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) dot += g[i] * s[i];
    for (std::size_t i = 0; i < s.size(); ++i) y[i] += dot * g[i];
  }
  for (auto& v : y) v /= static_cast<double>(grads.size());
  return y;
}

/// Unit-norm Gaussian directions.
inline std::vector<std::vector<double>> random_directions(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (auto& s : out) {
    for (auto& v : s) v = n(rng);
    const double nrm = norm2(s);
    for (auto& v : s) v /= nrm;
  }
  return out;
}

/// Low-rank curvature term of one task. Directions are random, responses
/// are empirical-Fisher-vector products over `sample_grads`, and the SR1
/// compact form starts from B0 = diag(base_diag + ε). Returns a term of rank
/// <= K (pairs failing the safeguard are dropped).
inline LowRankTerm csqn_term(const ParamVector& base_diag, const std::vector<ParamVector>& sample_grads,
                             const CsqnOptions& opt, std::mt19937_64& rng) {
  const std::size_t n = base_diag.total_len();
  if (opt.pairs > n) throw ConfigError("csqn: pair count exceeds parameter count");
  if (sample_grads.empty()) throw DataError("csqn: empty gradient batch");
  std::vector<std::vector<double>> grads;
  bool any_nonzero = false;
  for (const auto& g : sample_grads) {
    grads.push_back(g.flatten());
    any_nonzero = any_nonzero || norm2(grads.back()) > 0.0;
  }
  if (!any_nonzero) throw NumericError("csqn: degenerate batch (all gradients are zero)");
  auto b0 = base_diag.flatten();
  for (auto& v : b0) v += opt.epsilon;
  const auto s = random_directions(opt.pairs, n, rng);
  std::vector<std::vector<double>> y;
  for (const auto& sk : s) y.push_back(fisher_vector_product(grads, sk));
  return lowrank_from_sr1(sr1_compact(std::move(b0), s, y, opt.sr1), base_diag);
}

/// EWC curvature extended with one CSQN low-rank term. K = 0 returns the
/// plain EWC curvature.
inline Curvature csqn_build(const ParamVector& theta, const ParamVector& base_diag,
                            const std::vector<ParamVector>& sample_grads, const CsqnOptions& opt, double strength,
                            std::mt19937_64& rng) {
  Curvature c;
  c.diag = base_diag;
  c.anchor = theta;
  c.strength = strength;
  if (opt.pairs > 0) c.lowrank.push_back(csqn_term(base_diag, sample_grads, opt, rng));
  return c;
}

/// Per-segment spectral truncation of a low-rank term. For each segment the
/// block U_seg is replaced by its projection onto the top-r eigenvectors of
/// U_seg M U_seg^T, stored as basis [n_seg x r'] and coef [k x r'] with
/// r' = min(r, rank of the block). Cross-segment coupling through M is kept.
inline LowRankTerm csqn_bt_reduce(const LowRankTerm& term, std::size_t per_block_rank) {
  const std::size_t k = term.rank();
  if (per_block_rank < 1) throw ConfigError("csqn_bt_reduce: rank must be >= 1");
  if (per_block_rank > k) throw ConfigError("csqn_bt_reduce: rank exceeds the term's rank");
  using Mat = Eigen::MatrixXd;
  Mat core(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) core(a, b) = term.core.at(a, b);

  LowRankTerm out;
  out.core = term.core;
  for (const auto& blk : term.blocks) {
    const std::size_t n = blk.basis.rows(), r_in = blk.basis.cols();
    Mat basis(n, r_in);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < r_in; ++j) basis(i, j) = blk.basis.at(i, j);
    Mat u = basis;
    if (blk.has_coef()) {
      Mat coef(k, r_in);
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t j = 0; j < r_in; ++j) coef(a, j) = blk.coef.at(a, j);
      u = basis * coef.transpose();
    }
    // Thin QR: U_seg = Q R, Q [n x q], R [q x k].
    const std::size_t q = std::min(n, k);
    Eigen::HouseholderQR<Mat> qr(u);
    const Mat qmat = qr.householderQ() * Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
    const Mat rmat = qr.matrixQR().topRows(static_cast<Eigen::Index>(q)).triangularView<Eigen::Upper>();
    Eigen::SelfAdjointEigenSolver<Mat> eig(rmat * core * rmat.transpose());
    const std::size_t keep = std::min(per_block_rank, q);
    // Eigen sorts eigenvalues ascending; take the last `keep`.
    const Mat v = eig.eigenvectors().rightCols(static_cast<Eigen::Index>(keep));
    const Mat new_basis = qmat * v;                // n x keep
    const Mat new_coef = rmat.transpose() * v;     // k x keep
    LowRankBlock nb;
    nb.segment = blk.segment;
    nb.basis = Tensor::matrix(n, keep);
    nb.coef = Tensor::matrix(k, keep);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < keep; ++j)
        nb.basis.at(i, j) = new_basis(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < keep; ++j)
        nb.coef.at(a, j) = new_coef(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
    out.blocks.push_back(std::move(nb));
  }
  return out;
}

inline Curvature csqn_bt_reduce(const Curvature& curv, std::size_t per_block_rank) {
  Curvature out = curv;
  for (auto& t : out.lowrank) t = csqn_bt_reduce(t, per_block_rank);
  return out;
}

}  // namespace seqcl
