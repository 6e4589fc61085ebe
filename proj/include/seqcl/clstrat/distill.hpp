#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/ops.hpp"
#include "seqcl/seqmodel/types.hpp"

namespace seqcl {

/// Row-wise softmax(x / γ) of a constant matrix.
inline Tensor tempered_probs(const Tensor& logits, double gamma) {
  Tensor p = logits;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    double mx = row[0] / gamma;
    for (double v : row) mx = std::max(mx, v / gamma);
    double z = 0.0;
    for (auto& v : row) z += (v = std::exp(v / gamma - mx));
    for (auto& v : row) v /= z;
  }
  return p;
}

/// Σ_rows Σ_j p_T(j) (-log p_S(j)) with both distributions tempered by γ.
inline Var soft_cross_entropy(const Tensor& teacher, Var student, double gamma) {
  if (teacher.shape() != student.shape()) {
    throw ShapeError("distill_loss: teacher " + shape_str(teacher.shape()) + " vs student " + shape_str(student.shape()));
  }
  const Var log_s = ops::log_softmax_rows(gamma == 1.0 ? student : ops::scale(student, 1.0 / gamma));
  return ops::scale(ops::weighted_sum(log_s, tempered_probs(teacher, gamma)), -1.0);
}

/// λ [ c Σ CE(ctc rows) + (1-c) Σ CE(decoder rows) ], teacher outputs fixed.
inline Var distill_loss(const OutputValues& teacher, const ModelOutputs& student, double lambda, double gamma, double c) {
  if (!(gamma > 0.0)) throw ConfigError("distill_loss: temperature must be positive");
  Tape& tape = student.ctc_logprobs.tape();
  if (lambda == 0.0) return tape.constant(Tensor::scalar(0.0));
  Var total = tape.constant(Tensor::scalar(0.0));
  if (c != 0.0)
    total = ops::add(total, ops::scale(soft_cross_entropy(teacher.ctc_logprobs, student.ctc_logprobs, gamma), c));
  if (c != 1.0)
    total = ops::add(total, ops::scale(soft_cross_entropy(teacher.dec_logprobs, student.dec_logprobs, gamma), 1.0 - c));
  return ops::scale(total, lambda);
}

/// λ [ c Σ H(p_T^ctc) + (1-c) Σ H(p_T^dec) ]: the value of distill_loss when
/// student equals teacher.
inline double teacher_entropy(const OutputValues& teacher, double lambda, double gamma, double c) {
  auto entropy = [gamma](const Tensor& t) {
    const Tensor p = tempered_probs(t, gamma);
    double h = 0.0;
    for (double v : p.data())
      if (v > 0.0) h -= v * std::log(v);
    return h;
  };
  return lambda * (c * entropy(teacher.ctc_logprobs) + (1.0 - c) * entropy(teacher.dec_logprobs));
}

}  // namespace seqcl
