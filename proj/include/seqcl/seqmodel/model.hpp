#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/ops.hpp"
#include "seqcl/ndgrad/param_vector.hpp"
#include "seqcl/seqmodel/types.hpp"

namespace seqcl {

/// Desk-scale hybrid CTC/attention recognizer.
///
/// Encoder: ±1 frame context stacking, then `enc_layers` x (affine + tanh).
/// CTC head: affine + log-softmax over the encoder states.
/// Decoder: embedding of the previous token, tanh query projection,
/// single-head dot attention over the encoder states, affine over
/// [query; context] + log-softmax. Teacher forced on <sos> y_1 .. y_W.
class HybridModel {
 public:
  explicit HybridModel(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const ModelConfig& config() const noexcept { return cfg_; }

  /// Parameter count implied by the architecture.
  std::size_t param_count() const { return layout().total_len(); }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
  ParamVector init(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    ParamVector p = layout();
    for (std::size_t i = 0; i < p.num_segments(); ++i) {
      auto& t = p[i];
      if (t.rank() != 2) continue;
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.data()) v = dist(rng);
    }
    return p;
  }

  ParamVector init() const { return init(cfg_.seed); }

  /// Zero-valued parameters with the model's layout.
  ParamVector layout() const {
    const std::size_t d = cfg_.feature_dim, h = cfg_.hidden, o = cfg_.alphabet;
    ParamVector p;
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
      const std::size_t in = l == 0 ? 3 * d : h;
      p.add("enc" + std::to_string(l) + ".W", Tensor::matrix(in, h));
      p.add("enc" + std::to_string(l) + ".b", Tensor(Shape{h}));
    }
    p.add("ctc.W", Tensor::matrix(h, o));
    p.add("ctc.b", Tensor(Shape{o}));
    p.add("dec.emb", Tensor::matrix(o, h));
    p.add("dec.query.W", Tensor::matrix(h, h));
    p.add("dec.query.b", Tensor(Shape{h}));
    p.add("dec.out.W", Tensor::matrix(2 * h, o));
    p.add("dec.out.b", Tensor(Shape{o}));
    return p;
  }

  void check_params(const ParamVector& theta) const {
    const ParamVector ref = layout();
    if (!ref.same_layout(theta)) throw ShapeError("model: parameter layout does not match the model configuration");
  }

  /// Encoder states [L x h].
  Var encode(Tape& tape, const ParamVars& pv, const Tensor& frames) const {
    if (frames.rank() != 2 || frames.cols() != cfg_.feature_dim) {
      throw ShapeError("forward: frames " + shape_str(frames.shape()) + " do not match feature dim " +
                       std::to_string(cfg_.feature_dim));
    }
    Var x = ops::stack_context(tape.constant(frames), 1);
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) x = ops::tanh(ops::affine(x, pv[2 * l], pv[2 * l + 1]));
    return x;
  }

  Var ctc_head(const ParamVars& pv, Var enc) const {
    const std::size_t base = 2 * cfg_.enc_layers;
    return ops::log_softmax_rows(ops::affine(enc, pv[base], pv[base + 1]));
  }

  /// Decoder log-probabilities, one row per entry of `inputs` (each row is
  /// the distribution of the token following that input).
  Var decoder(const ParamVars& pv, Var enc, const std::vector<int>& inputs) const {
    const std::size_t base = 2 * cfg_.enc_layers + 2;
    Var emb = ops::embedding(pv[base], inputs);
    Var query = ops::tanh(ops::affine(emb, pv[base + 1], pv[base + 2]));
    Var context = ops::attention(query, enc, enc);
    return ops::log_softmax_rows(ops::affine(ops::concat_cols(query, context), pv[base + 3], pv[base + 4]));
  }

  /// Both heads, decoder teacher forced on the reference.
  ModelOutputs forward(Tape& tape, const ParamVars& pv, const Utterance& u) const {
    Var enc = encode(tape, pv, u.frames);
    std::vector<int> inputs;
    inputs.reserve(u.tokens.size() + 1);
    inputs.push_back(kStartEnd);
    inputs.insert(inputs.end(), u.tokens.begin(), u.tokens.end());
    return {ctc_head(pv, enc), decoder(pv, enc, inputs)};
  }

  /// Forward-only evaluation returning detached outputs.
  OutputValues forward_values(const ParamVector& theta, const Utterance& u) const {
    Tape tape;
    const ParamVars pv = bind(tape, theta, false);
    return detach(forward(tape, pv, u));
  }

 private:
  ModelConfig cfg_;
};

inline ParamVector init_model(const ModelConfig& cfg) { return HybridModel(cfg).init(); }

/// Decoder targets y_1 .. y_W <eos>.
inline std::vector<int> decoder_targets(const std::vector<int>& tokens) {
  std::vector<int> t(tokens);
  t.push_back(kStartEnd);
  return t;
}

}  // namespace seqcl
