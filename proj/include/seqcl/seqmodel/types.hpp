#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/tape.hpp"
#include "seqcl/ndgrad/tensor.hpp"

namespace seqcl {

inline constexpr int kBlank = 0;
inline constexpr int kStartEnd = 1;  // decoder <sos>/<eos>
inline constexpr int kFirstToken = 2;

/// Feature frames [L x d] and the reference token sequence.
struct Utterance {
  Tensor frames;
  std::vector<int> tokens;

  std::size_t num_frames() const noexcept { return frames.rows(); }
  std::size_t feature_dim() const noexcept { return frames.cols(); }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Checks L >= 1, W >= 1 and token ids in [2, alphabet).
inline void validate_utterance(const Utterance& u, std::size_t alphabet) {
  if (u.frames.rank() != 2 || u.frames.rows() < 1) throw DataError("utterance: frames must be a non-empty [L x d] matrix");
  if (u.tokens.empty()) throw DataError("utterance: empty transcript");
  for (int t : u.tokens) {
    if (t < kFirstToken || static_cast<std::size_t>(t) >= alphabet)
      throw DataError("utterance: token id " + std::to_string(t) + " outside [2, " + std::to_string(alphabet) + ")");
  }
}

struct ModelConfig {
  std::size_t feature_dim = 8;  // d
  std::size_t hidden = 32;      // h
  std::size_t enc_layers = 2;
  std::size_t alphabet = 10;    // o, including blank and <sos>/<eos>
  double ctc_weight = 0.3;      // c
  std::uint64_t seed = 1;

  void validate() const {
    if (feature_dim < 1 || hidden < 1 || enc_layers < 1) throw ConfigError("model: dimensions must be positive");
    if (alphabet < 3) throw ConfigError("model: alphabet size must be at least 3");
    if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw ConfigError("model: ctc weight must lie in [0, 1]");
  }
};

/// Log-probabilities of both heads, recorded on a tape. The decoder has one
/// row per target position, the final <eos> included.
struct ModelOutputs {
  Var ctc_logprobs;  // [L x o]
  Var dec_logprobs;  // [(W+1) x o]
};

/// Detached copy of ModelOutputs (teacher targets, reports).
struct OutputValues {
  Tensor ctc_logprobs;
  Tensor dec_logprobs;
};

inline OutputValues detach(const ModelOutputs& o) { return {o.ctc_logprobs.value(), o.dec_logprobs.value()}; }

}  // namespace seqcl
