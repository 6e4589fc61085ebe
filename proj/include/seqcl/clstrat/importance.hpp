#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/exemplar/memory.hpp"
#include "seqcl/ndgrad/ops.hpp"
#include "seqcl/ndgrad/param_vector.hpp"
#include "seqcl/seqmodel/losses.hpp"
#include "seqcl/seqmodel/model.hpp"

namespace seqcl {

/// Diagonal empirical Fisher from per-sample gradients: Ω_i = mean_b g_{b,i}^2.
inline ParamVector fisher_from_grads(const std::vector<ParamVector>& grads) {
  if (grads.empty()) throw DataError("ewc_fisher: no samples");
  ParamVector omega = grads.front().zeros_like();
  for (const auto& g : grads) {
    omega.require_layout(g, "ewc_fisher");
    for (std::size_t i = 0; i < omega.num_segments(); ++i) {
      auto o = omega[i].data();
      const auto v = g[i].data();
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += v[j] * v[j];
    }
  }
  return omega.scale(1.0 / static_cast<double>(grads.size()));
}

/// Indices of min(n, size) samples drawn uniformly without replacement.
inline std::vector<std::size_t> sample_indices(std::size_t size, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  const std::size_t take = std::min(n, size);
  for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + uniform_index(rng, size - i)]);
  idx.resize(take);
  return idx;
}

/// Per-utterance gradients of the hybrid loss (ground-truth labels). CTC
/// infeasible utterances are skipped.
inline std::vector<ParamVector> per_sample_grads(const HybridModel& model, const ParamVector& theta,
                                                 const std::vector<Utterance>& data, std::size_t n_samples,
                                                 std::mt19937_64& rng) {
  if (data.empty()) throw DataError("per_sample_grads: empty dataset");
  if (n_samples == 0) throw ConfigError("per_sample_grads: n_samples must be >= 1");
  std::vector<ParamVector> grads;
  for (auto i : sample_indices(data.size(), n_samples, rng)) {
    try {
      grads.push_back(grad(theta, [&](Tape& t, const ParamVars& pv) { return hybrid_loss(model, t, pv, data[i]); }));
    } catch (const CtcInfeasibleError&) {
    }
  }
  if (grads.empty()) throw DataError("per_sample_grads: every sampled utterance was infeasible");
  return grads;
}

/// EWC importance: diagonal of the empirical Fisher of the hybrid loss.
inline ParamVector ewc_fisher(const HybridModel& model, const ParamVector& theta, const std::vector<Utterance>& data,
                              std::size_t n_samples, std::mt19937_64& rng) {
  return fisher_from_grads(per_sample_grads(model, theta, data, n_samples, rng));
}

/// Two output heads of a model evaluated on one input; `second` may be an
/// invalid Var for single-head models.
struct HeadOutputs {
  Var first;
  Var second;
};

/// MAS importance Ω_i = E_x | c ∂‖f1‖²/∂θ_i + (1-c) ∂‖f2‖²/∂θ_i |, for any
/// `heads(tape, params, sample) -> HeadOutputs`. Labels are never used.
template <class Sample, class Heads>
ParamVector mas_importance(const ParamVector& theta, const std::vector<Sample>& samples, double c, Heads&& heads) {
  if (samples.empty()) throw DataError("mas_importance: empty dataset");
  ParamVector omega = theta.zeros_like();
  for (const auto& x : samples) {
    const ParamVector g = grad(theta, [&](Tape& t, const ParamVars& pv) {
      const HeadOutputs h = heads(t, pv, x);
      Var obj = ops::scale(ops::squared_l2(h.first), c);
      if (h.second.valid() && c < 1.0) obj = ops::add(obj, ops::scale(ops::squared_l2(h.second), 1.0 - c));
      return obj;
    });
    for (std::size_t i = 0; i < omega.num_segments(); ++i) {
      auto o = omega[i].data();
      const auto v = g[i].data();
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += std::abs(v[j]);
    }
  }
  return omega.scale(1.0 / static_cast<double>(samples.size()));
}

/// MAS on the recognizer: squared norms of the probability outputs of both
/// heads, the decoder conditioned on the stored transcript.
inline ParamVector mas_importance(const HybridModel& model, const ParamVector& theta, const std::vector<Utterance>& data,
                                  std::size_t n_samples, std::mt19937_64& rng) {
  if (data.empty()) throw DataError("mas_importance: empty dataset");
  if (n_samples == 0) throw ConfigError("mas_importance: n_samples must be >= 1");
  std::vector<const Utterance*> chosen;
  for (auto i : sample_indices(data.size(), n_samples, rng)) chosen.push_back(&data[i]);
  return mas_importance(theta, chosen, model.config().ctc_weight, [&](Tape& t, const ParamVars& pv, const Utterance* u) {
    const ModelOutputs out = model.forward(t, pv, *u);
    return HeadOutputs{ops::exp(out.ctc_logprobs), ops::exp(out.dec_logprobs)};
  });
}

}  // namespace seqcl
