#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/tensor.hpp"
#include "seqcl/seqmodel/types.hpp"

namespace seqcl {

struct SplitSizes {
  std::size_t train = 500;
  std::size_t valid = 100;
  std::size_t test = 100;
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

/// Generative description of one synthetic "dialect" task. A token k emits
/// 2-4 frames, each rotation * (prototype[k] + jitter[k]) + bias + noise.
struct TaskSpec {
  std::uint64_t task_id = 0;
  std::uint64_t seed = 0;
  Tensor rotation;    // [d x d], orthonormal
  Tensor bias;        // [d]
  Tensor bigram;      // [o x o]; row p = distribution of the token after p (row 1 is <sos>)
  Tensor prototypes;  // [o x d], shared across the family
  Tensor jitter;      // [o x d], task-specific prototype offsets
  double noise = 0.5;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 6;
  SplitSizes sizes;

  std::size_t feature_dim() const noexcept { return rotation.rows(); }
  std::size_t alphabet() const noexcept { return bigram.rows(); }

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct TaskDataset {
  TaskSpec spec;
  std::vector<Utterance> train;
  std::vector<Utterance> valid;
  std::vector<Utterance> test;

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

/// Knobs of the synthetic family beyond seed, similarity and sizes.
struct FamilyOptions {
  std::size_t feature_dim = 8;
  std::size_t alphabet = 10;
  double noise = 0.5;
  double prototype_scale = 1.0;
  double jitter_scale = 0.3;
  double bias_scale = 0.5;
  double rest_perturbation = 1.0;  // scale of the A-main -> A-rest rotation offset at similarity 0
  double bigram_sharpness = 1.5;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 6;
};

inline constexpr std::array<const char*, 4> kTaskNames{"A-main", "B-main", "A-rest", "B-rest"};

namespace detail {

/// splitmix64 finalizer; derives independent seed streams from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Tensor gaussian(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = cols ? Tensor::matrix(rows, cols) : Tensor(Shape{rows});
  for (auto& v : t.data()) v = scale * n(rng);
  return t;
}

/// Modified Gram-Schmidt on the columns of a square matrix.
inline Tensor orthonormalize(Tensor m) {
  const std::size_t d = m.rows();
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += m.at(i, j) * m.at(i, k);
      for (std::size_t i = 0; i < d; ++i) m.at(i, j) -= dot * m.at(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += m.at(i, j) * m.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("orthonormalize: rank-deficient matrix");
    for (std::size_t i = 0; i < d; ++i) m.at(i, j) /= norm;
  }
  return m;
}

inline Tensor random_rotation(std::size_t d, std::mt19937_64& rng) { return orthonormalize(gaussian(d, d, 1.0, rng)); }

/// Row-stochastic table over real tokens with no self transitions.
inline Tensor random_bigram(std::size_t o, double sharpness, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor b = Tensor::matrix(o, o);
  for (std::size_t p = 0; p < o; ++p) {
    double z = 0.0;
    for (std::size_t k = kFirstToken; k < o; ++k) {
      if (k == p) continue;
      z += (b.at(p, k) = std::exp(sharpness * n(rng)));
    }
    for (std::size_t k = kFirstToken; k < o; ++k) b.at(p, k) /= z;
  }
  return b;
}

inline Utterance sample_utterance(const TaskSpec& spec, std::mt19937_64& rng) {
  const std::size_t d = spec.feature_dim(), o = spec.alphabet();
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_tokens, spec.max_tokens);
  std::uniform_int_distribution<std::size_t> frames_dist(2, 4);
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Utterance u;
  const std::size_t w = len_dist(rng);
  std::size_t prev = kStartEnd;
  for (std::size_t i = 0; i < w; ++i) {
    double r = unit(rng), acc = 0.0;
    std::size_t next = o - 1;
    for (std::size_t k = kFirstToken; k < o; ++k) {
      acc += spec.bigram.at(prev, k);
      if (r < acc) {
        next = k;
        break;
      }
    }
    if (next == prev) next = next + 1 < o ? next + 1 : kFirstToken;
    u.tokens.push_back(static_cast<int>(next));
    prev = next;
  }
  std::vector<double> frames;
  std::vector<double> clean(d);
  for (int tok : u.tokens) {
    const auto k = static_cast<std::size_t>(tok);
    for (std::size_t i = 0; i < d; ++i) {
      double s = spec.bias[i];
      for (std::size_t j = 0; j < d; ++j) s += spec.rotation.at(i, j) * (spec.prototypes.at(k, j) + spec.jitter.at(k, j));
      clean[i] = s;
    }
    const std::size_t reps = frames_dist(rng);
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t i = 0; i < d; ++i) frames.push_back(clean[i] + noise(rng));
  }
  const std::size_t len = frames.size() / d;
  u.frames = Tensor(Shape{len, d}, std::move(frames));
  return u;
}

inline std::vector<Utterance> sample_split(const TaskSpec& spec, std::size_t n, std::uint64_t split_tag) {
  std::mt19937_64 rng(mix_seed(spec.seed, split_tag));
  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_utterance(spec, rng));
  return out;
}

}  // namespace detail

/// Draws train/valid/test from disjoint seed streams of the task seed.
inline TaskDataset materialize(const TaskSpec& spec) {
  TaskDataset ds;
  ds.spec = spec;
  ds.train = detail::sample_split(spec, spec.sizes.train, 1);
  ds.valid = detail::sample_split(spec, spec.sizes.valid, 2);
  ds.test = detail::sample_split(spec, spec.sizes.test, 3);
  return ds;
}

/// Frobenius distance between two equally shaped matrices.
inline double frobenius_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("frobenius_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// The four-task family A-main, B-main, A-rest, B-rest. The *-rest tasks
/// reuse their *-main transform perturbed by (1 - similarity); at
/// similarity 1 the transforms are identical.
inline std::array<TaskDataset, 4> generate_family(std::uint64_t master_seed, double similarity, SplitSizes sizes,
                                                  const FamilyOptions& opt = {}) {
  if (!(similarity >= 0.0 && similarity <= 1.0)) throw ConfigError("generate_family: similarity must lie in [0, 1]");
  if (opt.alphabet < 4) throw ConfigError("generate_family: alphabet needs at least two real tokens");
  if (opt.min_tokens < 1 || opt.min_tokens > opt.max_tokens) throw ConfigError("generate_family: bad token length range");
  if (sizes.train == 0 || sizes.valid == 0 || sizes.test == 0) throw ConfigError("generate_family: empty split");
  const std::size_t d = opt.feature_dim, o = opt.alphabet;

  std::mt19937_64 shared(detail::mix_seed(master_seed, 100));
  const Tensor prototypes = detail::gaussian(o, d, opt.prototype_scale, shared);

  struct Dialect {
    Tensor rotation, bias, bigram;
  };
  auto dialect = [&](std::uint64_t tag) {
    std::mt19937_64 rng(detail::mix_seed(master_seed, tag));
    Dialect dl;
    dl.rotation = detail::random_rotation(d, rng);
    dl.bias = detail::gaussian(d, 0, opt.bias_scale, rng);
    dl.bigram = detail::random_bigram(o, opt.bigram_sharpness, rng);
    return dl;
  };
  const Dialect a = dialect(200), b = dialect(300);

  auto make_spec = [&](std::uint64_t id, const Dialect& base, bool rest) {
    std::mt19937_64 rng(detail::mix_seed(master_seed, 400 + id));
    TaskSpec s;
    s.task_id = id;
    s.seed = detail::mix_seed(master_seed, 500 + id);
    s.rotation = base.rotation;
    s.bias = base.bias;
    s.bigram = base.bigram;
    const Tensor offset = detail::gaussian(d, d, opt.rest_perturbation * (1.0 - similarity), rng);
    const Tensor bigram_shift = detail::random_bigram(o, opt.bigram_sharpness, rng);
    if (rest && similarity < 1.0) {
      for (std::size_t i = 0; i < s.rotation.size(); ++i) s.rotation[i] += offset[i];
      s.rotation = detail::orthonormalize(std::move(s.rotation));
      // Bigram reweighting: blend towards an independent table.
      const double w = 1.0 - similarity;
      for (std::size_t i = 0; i < s.bigram.size(); ++i) s.bigram[i] = (1.0 - w) * s.bigram[i] + w * bigram_shift[i];
    }
    s.prototypes = prototypes;
    s.jitter = detail::gaussian(o, d, opt.jitter_scale, rng);
    s.noise = opt.noise;
    s.min_tokens = opt.min_tokens;
    s.max_tokens = opt.max_tokens;
    s.sizes = sizes;
    return s;
  };

  return {materialize(make_spec(0, a, false)), materialize(make_spec(1, b, false)),
          materialize(make_spec(2, a, true)), materialize(make_spec(3, b, true))};
}

}  // namespace seqcl
