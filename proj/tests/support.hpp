#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "seqcl/seqmodel/model.hpp"
#include "seqcl/seqmodel/types.hpp"
#include "seqcl/taskforge/task.hpp"

namespace seqcl::test {

inline ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.feature_dim = 3;
  c.hidden = 5;
  c.enc_layers = 1;
  c.alphabet = 5;
  c.ctc_weight = 0.3;
  c.seed = seed;
  return c;
}

/// Random utterance with `frames` frames and `tokens` real tokens.
inline Utterance random_utterance(std::mt19937_64& rng, std::size_t dim, std::size_t alphabet, std::size_t frames,
                                  std::size_t tokens) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> tok(kFirstToken, static_cast<int>(alphabet) - 1);
  Utterance u;
  u.frames = Tensor::matrix(frames, dim);
  for (auto& v : u.frames.data()) v = n(rng);
  for (std::size_t i = 0; i < tokens; ++i) u.tokens.push_back(tok(rng));
  return u;
}

inline std::vector<Utterance> random_set(std::size_t n, std::uint64_t seed, const ModelConfig& c = tiny_config()) {
  std::mt19937_64 rng(seed);
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_utterance(rng, c.feature_dim, c.alphabet, 6, 2 + i % 2));
  return out;
}

inline ParamVector random_params(const ParamVector& layout, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  ParamVector p = layout;
  for (std::size_t i = 0; i < p.num_segments(); ++i)
    for (auto& v : p[i].data()) v = n(rng);
  return p;
}

/// Small four-task family for end-to-end tests.
inline std::vector<TaskDataset> small_family(std::uint64_t seed, std::size_t train = 24) {
  FamilyOptions fo;
  fo.feature_dim = 4;
  fo.alphabet = 6;
  const auto fam = generate_family(seed, 0.5, {train, 8, 8}, fo);
  return {fam.begin(), fam.end()};
}

}  // namespace seqcl::test
