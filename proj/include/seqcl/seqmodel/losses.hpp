#pragma once

#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/ops.hpp"
#include "seqcl/seqmodel/ctc.hpp"
#include "seqcl/seqmodel/model.hpp"
#include "seqcl/seqmodel/types.hpp"

namespace seqcl {

inline Var ctc_loss(const ModelOutputs& out, const std::vector<int>& tokens) {
  return ctc_loss(out.ctc_logprobs, tokens);
}

/// Mean over decoder positions of -log p(target). `targets` must include the
/// final <eos>; see decoder_targets().
inline Var ce_loss(Var dec_logprobs, const std::vector<int>& targets) {
  if (dec_logprobs.value().rows() != targets.size() || dec_logprobs.value().rank() != 2) {
    throw ShapeError("ce_loss: " + std::to_string(targets.size()) + " targets for decoder output " +
                     shape_str(dec_logprobs.shape()));
  }
  return ops::scale(ops::mean(ops::pick(dec_logprobs, targets)), -1.0);
}

inline Var ce_loss(const ModelOutputs& out, const std::vector<int>& tokens) {
  return ce_loss(out.dec_logprobs, decoder_targets(tokens));
}

/// c * CTC + (1 - c) * CE. A zero weight drops its term from the graph, so
/// c = 0 never evaluates (or throws on) the CTC alignment.
inline Var hybrid_loss(const ModelOutputs& out, const std::vector<int>& tokens, double c) {
  if (c == 0.0) return ce_loss(out, tokens);
  if (c == 1.0) return ctc_loss(out, tokens);
  return ops::add(ops::scale(ctc_loss(out, tokens), c), ops::scale(ce_loss(out, tokens), 1.0 - c));
}

inline Var hybrid_loss(const HybridModel& model, Tape& tape, const ParamVars& pv, const Utterance& u) {
  return hybrid_loss(model.forward(tape, pv, u), u.tokens, model.config().ctc_weight);
}

}  // namespace seqcl
