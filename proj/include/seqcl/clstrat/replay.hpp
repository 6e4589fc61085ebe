#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/exemplar/memory.hpp"
#include "seqcl/seqmodel/types.hpp"

namespace seqcl {

enum class SampleSource { Task, Memory, Joint };

/// A training utterance together with where it was read from. The harness
/// audits these to prove which datasets a run touched.
struct Sample {
  const Utterance* utt = nullptr;
  std::uint64_t task_id = 0;
  SampleSource source = SampleSource::Task;
};

struct WeightedBatch {
  std::vector<Sample> items;
  double weight = 1.0;
};

enum class ReplayMode { ER, ERLambda, BER };

inline std::vector<Sample> memory_batch(const ExemplarMemory& memory, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<Sample> out;
  for (const auto* e : memory.sample_minibatch(batch_size, rng)) out.push_back({&e->utterance, e->task_id, SampleSource::Memory});
  return out;
}

/// Step-level batch composition. ER and ER_λ add a memory batch of
/// `memory_batch_size` with weight 1 or λ. BER composes at the epoch level
/// (see ber_epoch_pool) and passes the step batch through.
inline std::vector<WeightedBatch> er_compose(std::vector<Sample> task_batch, const ExemplarMemory& memory, ReplayMode mode,
                                             double lambda, std::mt19937_64& rng, std::size_t memory_batch_size) {
  if (mode == ReplayMode::ERLambda && !(lambda > 0.0 && lambda < 1.0))
    throw ConfigError("ER_lambda: weight must lie in (0, 1)");
  std::vector<WeightedBatch> out{{std::move(task_batch), 1.0}};
  if (mode == ReplayMode::BER) return out;
  if (memory.empty()) throw ConfigError("ER: memory is empty");
  out.push_back({memory_batch(memory, memory_batch_size, rng), mode == ReplayMode::ERLambda ? lambda : 1.0});
  return out;
}

/// BER epoch pool: the task's training samples followed by every memory entry.
/// The caller shuffles.
inline std::vector<Sample> ber_epoch_pool(std::vector<Sample> task_set, const ExemplarMemory& memory) {
  for (const auto& e : memory.entries()) task_set.push_back({&e.utterance, e.task_id, SampleSource::Memory});
  return task_set;
}

}  // namespace seqcl
