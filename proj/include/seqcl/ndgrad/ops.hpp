#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/tape.hpp"
#include "seqcl/ndgrad/tensor.hpp"

// Differentiable ops over Tape variables. Every op validates shapes and
// throws ShapeError naming itself and the offending shapes.
namespace seqcl::ops {

namespace detail {

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline void same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

inline void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// out[r x c] += a[r x k] * b[k x c]
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t r,
                    std::size_t k, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    double* o = out.data() + i * c;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.data() + p * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += av * bp[j];
    }
  }
}

// out[r x c] += a[r x k] * b[c x k]^T
inline void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t r,
                    std::size_t k, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < c; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      out[i * c + j] += s;
    }
  }
}

// out[k x c] += a[r x k]^T * b[r x c]
inline void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t r,
                    std::size_t k, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* ai = a.data() + i * k;
    const double* bi = b.data() + i * c;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* o = out.data() + p * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += av * bi[j];
    }
  }
}

inline double logsumexp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_tape(a, b, "add");
  if (a.shape() != b.shape()) detail::shape_fail("add", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "add", detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (auto id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b, "sub");
  if (a.shape() != b.shape()) detail::shape_fail("sub", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "sub", detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& gi = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gi = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b, "mul");
  if (a.shape() != b.shape()) detail::shape_fail("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "mul", detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      const auto& bv = t.value(ib);
      auto& gi = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      const auto& av = t.value(ia);
      auto& gi = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double k) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= k;
  const auto ia = a.id();
  return a.tape().record(std::move(out), "scale", a.requires_grad(), [ia, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += k * g[i];
  });
}

/// Multiplies a tensor by a scalar (rank-0 or single-element) variable.
inline Var scale_by(Var a, Var s) {
  detail::same_tape(a, s, "scale_by");
  if (s.value().size() != 1) detail::shape_fail("scale_by", a.shape(), s.shape());
  const double k = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.data()) v *= k;
  const auto ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), "scale_by", detail::any_grad({a, s}), [ia, is](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      const double k = t.value(is)[0];
      auto& gi = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += k * g[i];
    }
    if (t.requires_grad(is)) {
      const auto& av = t.value(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad(is)[0] += acc;
    }
  });
}

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b, "matmul");
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  if (b.shape()[0] != k) detail::shape_fail("matmul", a.shape(), b.shape());
  Tensor out = Tensor::matrix(r, c);
  detail::gemm_nn(a.value().data(), b.value().data(), out.data(), r, k, c);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "matmul", detail::any_grad({a, b}),
                         [ia, ib, r, k, c](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) detail::gemm_nt(g.data(), t.value(ib).data(), t.grad(ia).data(), r, c, k);
                           if (t.requires_grad(ib)) detail::gemm_tn(t.value(ia).data(), g.data(), t.grad(ib).data(), r, k, c);
                         });
}

/// a * b^T for a [r x k], b [c x k].
inline Var matmul_nt(Var a, Var b) {
  detail::same_tape(a, b, "matmul_nt");
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[0];
  if (b.shape()[1] != k) detail::shape_fail("matmul_nt", a.shape(), b.shape());
  Tensor out = Tensor::matrix(r, c);
  detail::gemm_nt(a.value().data(), b.value().data(), out.data(), r, k, c);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "matmul_nt", detail::any_grad({a, b}),
                         [ia, ib, r, k, c](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);  // r x c
                           if (t.requires_grad(ia)) detail::gemm_nn(g.data(), t.value(ib).data(), t.grad(ia).data(), r, c, k);
                           if (t.requires_grad(ib)) detail::gemm_tn(g.data(), t.value(ia).data(), t.grad(ib).data(), r, c, k);
                         });
}

/// Row-wise x W + b, with x [n x in], W [in x out], b [out].
inline Var affine(Var x, Var w, Var b) {
  detail::same_tape(x, w, "affine");
  detail::same_tape(x, b, "affine");
  detail::require_matrix(x, "affine");
  detail::require_matrix(w, "affine");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[1];
  if (w.shape()[0] != in) detail::shape_fail("affine", x.shape(), w.shape());
  if (b.value().rank() != 1 || b.shape()[0] != out_dim) detail::shape_fail("affine", w.shape(), b.shape());
  Tensor out = Tensor::matrix(n, out_dim);
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) out.at(i, j) = bv[j];
  detail::gemm_nn(x.value().data(), w.value().data(), out.data(), n, in, out_dim);
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(out), "affine", detail::any_grad({x, w, b}),
                         [ix, iw, ib, n, in, out_dim](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ix))
                             detail::gemm_nt(g.data(), t.value(iw).data(), t.grad(ix).data(), n, out_dim, in);
                           if (t.requires_grad(iw))
                             detail::gemm_tn(t.value(ix).data(), g.data(), t.grad(iw).data(), n, in, out_dim);
                           if (t.requires_grad(ib)) {
                             auto& gb = t.grad(ib);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g.at(i, j);
                           }
                         });
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  const auto ia = a.id();
  return a.tape().record(std::move(out), "tanh", a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id();
  return a.tape().record(std::move(out), "relu", a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) gi[i] += g[i];
  });
}

inline Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  const auto ia = a.id();
  return a.tape().record(std::move(out), "exp", a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i];
  });
}

inline Var softmax_rows(Var a) {
  Tensor out = a.value();
  const std::size_t n = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (auto& v : r) s += (v = std::exp(v - m));
    for (auto& v : r) v /= s;
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), "softmax", a.requires_grad(), [ia, n, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < c; ++j) gi.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

inline Var log_softmax_rows(Var a) {
  Tensor out = a.value();
  const std::size_t n = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    const double lse = detail::logsumexp(r);
    for (auto& v : r) v -= lse;
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), "log_softmax", a.requires_grad(), [ia, n, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g.at(i, j);
      for (std::size_t j = 0; j < c; ++j) gi.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gsum;
    }
  });
}

/// Gathers rows `ids` of `table` [V x h] into an [n x h] matrix.
inline Var embedding(Var table, const std::vector<int>& ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0], h = table.shape()[1];
  Tensor out = Tensor::matrix(ids.size(), h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " + shape_str(table.shape()));
    }
    auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const auto it = table.id();
  return table.tape().record(std::move(out), "embedding", table.requires_grad(), [it, ids, h](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto& gt = t.grad(it);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < h; ++j) gt.at(static_cast<std::size_t>(ids[i]), j) += g.at(i, j);
  });
}

/// Picks out[i] = a[i, cols[i]] for a [n x c].
inline Var pick(Var a, const std::vector<int>& cols) {
  detail::require_matrix(a, "pick");
  const std::size_t n = a.shape()[0], c = a.shape()[1];
  if (cols.size() != n) throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_str(a.shape()));
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= c) {
      throw ShapeError("pick: column " + std::to_string(cols[i]) + " outside " + shape_str(a.shape()));
    }
    out[i] = a.value().at(i, static_cast<std::size_t>(cols[i]));
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), "pick", a.requires_grad(), [ia, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < cols.size(); ++i) gi.at(i, static_cast<std::size_t>(cols[i])) += g[i];
  });
}

/// Horizontal concatenation of two matrices with equal row counts.
inline Var concat_cols(Var a, Var b) {
  detail::same_tape(a, b, "concat_cols");
  detail::require_matrix(a, "concat_cols");
  detail::require_matrix(b, "concat_cols");
  const std::size_t n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  if (b.shape()[0] != n) detail::shape_fail("concat_cols", a.shape(), b.shape());
  Tensor out = Tensor::matrix(n, ca + cb);
  for (std::size_t i = 0; i < n; ++i) {
    auto ra = a.value().row(i);
    auto rb = b.value().row(i);
    std::copy(ra.begin(), ra.end(), out.row(i).begin());
    std::copy(rb.begin(), rb.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "concat_cols", detail::any_grad({a, b}),
                         [ia, ib, n, ca, cb](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) {
                             auto& gi = t.grad(ia);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < ca; ++j) gi.at(i, j) += g.at(i, j);
                           }
                           if (t.requires_grad(ib)) {
                             auto& gi = t.grad(ib);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < cb; ++j) gi.at(i, j) += g.at(i, ca + j);
                           }
                         });
}

/// Stacks each row with its `radius` neighbours on either side (zero padded):
/// [L x d] -> [L x (2*radius+1)*d].
inline Var stack_context(Var x, std::size_t radius) {
  detail::require_matrix(x, "stack_context");
  const std::size_t len = x.shape()[0], d = x.shape()[1], width = 2 * radius + 1;
  Tensor out = Tensor::matrix(len, width * d);
  const auto& xv = x.value();
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t w = 0; w < width; ++w) {
      const auto src = static_cast<std::ptrdiff_t>(t + w) - static_cast<std::ptrdiff_t>(radius);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      for (std::size_t j = 0; j < d; ++j) out.at(t, w * d + j) = xv.at(static_cast<std::size_t>(src), j);
    }
  const auto ix = x.id();
  return x.tape().record(std::move(out), "stack_context", x.requires_grad(),
                         [ix, len, d, width, radius](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           auto& gi = t.grad(ix);
                           for (std::size_t r = 0; r < len; ++r)
                             for (std::size_t w = 0; w < width; ++w) {
                               const auto src = static_cast<std::ptrdiff_t>(r + w) - static_cast<std::ptrdiff_t>(radius);
                               if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                               for (std::size_t j = 0; j < d; ++j) gi.at(static_cast<std::size_t>(src), j) += g.at(r, w * d + j);
                             }
                         });
}

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id();
  return a.tape().record(std::move(out), "reshape", a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto ia = a.id();
  return a.tape().record(Tensor::scalar(s), "sum", a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(ia).data()) v += g;
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

inline Var squared_l2(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  const auto ia = a.id();
  return a.tape().record(Tensor::scalar(s), "squared_l2", a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const auto& x = t.value(ia);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gi[i] += 2.0 * g * x[i];
  });
}

/// sum_i w_i * a_i with a constant weight tensor of the same shape.
inline Var weighted_sum(Var a, const Tensor& w) {
  if (w.shape() != a.shape()) detail::shape_fail("weighted_sum", a.shape(), w.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a.value()[i];
  const auto ia = a.id();
  return a.tape().record(Tensor::scalar(s), "weighted_sum", a.requires_grad(), [ia, w](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < w.size(); ++i) gi[i] += g * w[i];
  });
}

/// sum_i w_i (a_i - anchor_i)^2. `anchor` and `w` are referenced, not
/// copied, and must outlive the tape's backward pass.
inline Var weighted_sq_dist(Var a, const Tensor& anchor, const Tensor& w) {
  if (anchor.size() != a.value().size()) detail::shape_fail("weighted_sq_dist", a.shape(), anchor.shape());
  if (w.size() != a.value().size()) detail::shape_fail("weighted_sq_dist", a.shape(), w.shape());
  const auto& av = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - anchor[i];
    s += w[i] * d * d;
  }
  const auto ia = a.id();
  const Tensor* ap = &anchor;
  const Tensor* wp = &w;
  return a.tape().record(Tensor::scalar(s), "weighted_sq_dist", a.requires_grad(), [ia, ap, wp](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const auto& av = t.value(ia);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < av.size(); ++i) gi[i] += 2.0 * g * (*wp)[i] * (av[i] - (*ap)[i]);
  });
}

/// basis^T (a - anchor) for basis [n x r] and a holding n elements; returns
/// an [r] vector. `basis` and `anchor` are referenced, not copied.
inline Var project_offset(Var a, const Tensor& anchor, const Tensor& basis) {
  const std::size_t n = a.value().size();
  if (basis.rank() != 2 || basis.shape()[0] != n) detail::shape_fail("project_offset", a.shape(), basis.shape());
  if (anchor.size() != n) detail::shape_fail("project_offset", a.shape(), anchor.shape());
  const std::size_t r = basis.shape()[1];
  Tensor out(Shape{r});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = av[i] - anchor[i];
    if (d == 0.0) continue;
    const double* bi = basis.data().data() + i * r;
    for (std::size_t j = 0; j < r; ++j) out[j] += bi[j] * d;
  }
  const auto ia = a.id();
  const Tensor* bp = &basis;
  return a.tape().record(std::move(out), "project_offset", a.requires_grad(), [ia, bp, n, r](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      const double* bi = bp->data().data() + i * r;
      double s = 0.0;
      for (std::size_t j = 0; j < r; ++j) s += bi[j] * g[j];
      gi[i] += s;
    }
  });
}

/// Multiplies an [r] vector by a constant matrix: m [k x r] * v -> [k].
inline Var const_matvec(const Tensor& m, Var v) {
  if (m.rank() != 2 || m.shape()[1] != v.value().size()) detail::shape_fail("const_matvec", m.shape(), v.shape());
  const std::size_t k = m.shape()[0], r = m.shape()[1];
  Tensor out(Shape{k});
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < r; ++j) s += m.at(i, j) * v.value()[j];
    out[i] = s;
  }
  const auto iv = v.id();
  return v.tape().record(std::move(out), "const_matvec", v.requires_grad(), [iv, m, k, r](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto& gi = t.grad(iv);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < r; ++j) gi[j] += m.at(i, j) * g[i];
  });
}

/// Single-head scaled dot-product attention softmax(q k^T / sqrt(h)) v.
inline Var attention(Var q, Var k, Var v) {
  detail::require_matrix(q, "attention");
  detail::require_matrix(k, "attention");
  detail::require_matrix(v, "attention");
  if (q.shape()[1] != k.shape()[1]) detail::shape_fail("attention", q.shape(), k.shape());
  if (k.shape()[0] != v.shape()[0]) detail::shape_fail("attention", k.shape(), v.shape());
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  return matmul(softmax_rows(scale(matmul_nt(q, k), inv)), v);
}

}  // namespace seqcl::ops
