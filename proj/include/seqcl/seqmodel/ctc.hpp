#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/ops.hpp"
#include "seqcl/seqmodel/types.hpp"

namespace seqcl {

/// The transcript cannot be aligned to the available frames.
class CtcInfeasibleError : public DataError {
 public:
  using DataError::DataError;
};

/// Minimum frame count for a CTC alignment: one frame per token plus a blank
/// between each pair of equal neighbours.
inline std::size_t ctc_min_frames(const std::vector<int>& tokens) {
  std::size_t n = tokens.size();
  for (std::size_t i = 1; i < tokens.size(); ++i)
    if (tokens[i] == tokens[i - 1]) ++n;
  return n;
}

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

/// -log P(tokens | per-frame log-probabilities), summed over every
/// blank-extended alignment with the log-space forward-backward recursion.
/// Differentiable w.r.t. `logprobs` [L x o].
inline Var ctc_loss(Var logprobs, const std::vector<int>& tokens, int blank = kBlank) {
  using detail::kNegInf;
  using detail::log_add;
  const Tensor& lp = logprobs.value();
  if (lp.rank() != 2) throw ShapeError("ctc_loss: expected [L x o] log-probabilities, got " + shape_str(lp.shape()));
  const std::size_t frames = lp.rows(), alphabet = lp.cols();
  if (tokens.empty()) throw DataError("ctc_loss: empty transcript");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= alphabet || t == blank)
      throw ShapeError("ctc_loss: token " + std::to_string(t) + " invalid for alphabet " + std::to_string(alphabet));
  const std::size_t need = ctc_min_frames(tokens);
  if (frames < need) {
    throw CtcInfeasibleError("ctc_loss: " + std::to_string(frames) + " frames cannot align " +
                             std::to_string(tokens.size()) + " tokens (need " + std::to_string(need) + ")");
  }

  const std::size_t states = 2 * tokens.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < tokens.size(); ++i) ext[2 * i + 1] = tokens[i];
  auto skip_allowed = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(frames * states, kNegInf), beta(frames * states, kNegInf);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return alpha[t * states + s]; };
  auto B = [&](std::size_t t, std::size_t s) -> double& { return beta[t * states + s]; };
  auto emit = [&](std::size_t t, std::size_t s) { return lp.at(t, static_cast<std::size_t>(ext[s])); };

  A(0, 0) = emit(0, 0);
  A(0, 1) = emit(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (skip_allowed(s)) acc = log_add(acc, A(t - 1, s - 2));
      A(t, s) = acc == kNegInf ? kNegInf : acc + emit(t, s);
    }
  }
  B(frames - 1, states - 1) = emit(frames - 1, states - 1);
  B(frames - 1, states - 2) = emit(frames - 1, states - 2);
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = B(t + 1, s);
      if (s + 1 < states) acc = log_add(acc, B(t + 1, s + 1));
      if (s + 2 < states && skip_allowed(s + 2)) acc = log_add(acc, B(t + 1, s + 2));
      B(t, s) = acc == kNegInf ? kNegInf : acc + emit(t, s);
    }
  }
  const double log_p = log_add(A(frames - 1, states - 1), A(frames - 1, states - 2));
  if (!std::isfinite(log_p)) throw NumericError("ctc_loss: alignment probability underflow");

  // d(-log P)/d lp[t][k] = -sum_{s: ext[s]=k} alpha_t(s) beta_t(s) / (y_t(k) P)
  Tensor local(lp.shape(), 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t s = 0; s < states; ++s) {
      const double a = A(t, s), b = B(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      local.at(t, static_cast<std::size_t>(ext[s])) -= std::exp(a + b - emit(t, s) - log_p);
    }

  const auto il = logprobs.id();
  return logprobs.tape().record(Tensor::scalar(-log_p), "ctc_loss", logprobs.requires_grad(),
                                [il, local = std::move(local)](Tape& tape, std::size_t self) {
                                  const double g = tape.grad(self)[0];
                                  auto& gi = tape.grad(il);
                                  for (std::size_t i = 0; i < local.size(); ++i) gi[i] += g * local[i];
                                });
}

}  // namespace seqcl
