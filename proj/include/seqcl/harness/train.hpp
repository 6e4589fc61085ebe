#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "seqcl/clmetrics/results.hpp"
#include "seqcl/clstrat/strategy.hpp"
#include "seqcl/error.hpp"
#include "seqcl/exemplar/memory.hpp"
#include "seqcl/harness/optimizer.hpp"
#include "seqcl/ndgrad/checkpoint.hpp"
#include "seqcl/seqmodel/decode.hpp"
#include "seqcl/seqmodel/error_rate.hpp"
#include "seqcl/seqmodel/snapshot.hpp"

namespace seqcl {

struct TrainConfig {
  std::size_t max_epochs = 60;
  std::size_t patience = 10;
  std::size_t snapshot_count = 10;
  std::size_t batch_size = 8;
  double lr_factor_first = 10.0;
  double lr_factor_later = 1.0;
  std::size_t warmup_steps = 200;
  double noam_dim = 256.0;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  DecodeOptions valid_decode{DecodeMode::CtcGreedy, 1};
  DecodeOptions test_decode{DecodeMode::Hybrid, 4};
  std::string diagnostic_dir;  // where a diverged run dumps its parameters

  void validate() const {
    if (patience > max_epochs && max_epochs > 0) throw ConfigError("train: patience exceeds max_epochs");
    if (snapshot_count < 1) throw ConfigError("train: snapshot_count must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr_factor_first > 0.0 && lr_factor_later > 0.0)) throw ConfigError("train: learning-rate factors must be positive");
    if (!(noam_dim > 0.0)) throw ConfigError("train: noam_dim must be positive");
  }
};

using DataAudit = std::function<void(const Sample&)>;

/// Per-utterance edit counts of `decode` against the references.
inline EvalCell evaluate_set(const HybridModel& model, const ParamVector& theta, const std::vector<Utterance>& set,
                             const DecodeOptions& opt) {
  if (set.empty()) throw DataError("evaluate: empty set");
  std::vector<EditCount> counts;
  counts.reserve(set.size());
  for (const auto& u : set) counts.push_back(error_rate(decode(model, theta, u.frames, opt), u.tokens));
  return make_cell(std::move(counts));
}

inline EvalCell evaluate_set(const HybridModel& model, const ParamVector& theta, const std::vector<const Utterance*>& set,
                             const DecodeOptions& opt) {
  if (set.empty()) throw DataError("evaluate: empty set");
  std::vector<EditCount> counts;
  for (const auto* u : set) counts.push_back(error_rate(decode(model, theta, u->frames, opt), u->tokens));
  return make_cell(std::move(counts));
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_ter = 0.0;
};

struct TrainResult {
  ParamVector theta;
  std::vector<EpochLog> history;
  double best_valid_ter = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  std::size_t steps = 0;
  std::size_t snapshots_averaged = 0;
};

/// Shuffle with the portable index sampler.
template <class T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

/// Trains one task. Each step composes batches through the strategy, adds
/// its extra loss, transforms the gradient and takes an Adam step; after
/// every epoch the new-task validation TER drives early stopping. The result
/// is the average of the last `snapshot_count` end-of-epoch parameters.
inline TrainResult train_task(const HybridModel& model, const ParamVector& theta_init, const std::vector<Sample>& train,
                              const std::vector<Utterance>& valid, Strategy& strategy, const ExemplarMemory* memory,
                              const TrainConfig& cfg, double lr_factor, std::mt19937_64& rng,
                              const DataAudit& audit = {}) {
  cfg.validate();
  model.check_params(theta_init);
  TrainResult res;
  res.theta = theta_init;
  if (cfg.max_epochs == 0) return res;
  if (train.empty()) throw DataError("train_task: empty training set");

  ParamVector theta = theta_init;
  Adam opt(theta, AdamConfig{0.9, 0.98, 1e-9, cfg.clip_norm}, NoamSchedule{lr_factor, cfg.noam_dim, cfg.warmup_steps});
  std::deque<ParamVector> snapshots;
  std::size_t since_best = 0;
  auto record = [&](const std::vector<Sample>& batch) {
    if (audit)
      for (const auto& s : batch) audit(s);
  };

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<Sample> pool = train;
    if (strategy.merges_memory_into_epoch() && memory) pool = ber_epoch_pool(std::move(pool), *memory);
    shuffle_in_place(pool, rng);
    double loss_sum = 0.0;
    std::size_t n_steps = 0;
    for (std::size_t start = 0; start < pool.size(); start += cfg.batch_size) {
      std::vector<Sample> batch(pool.begin() + static_cast<std::ptrdiff_t>(start),
                                pool.begin() + static_cast<std::ptrdiff_t>(std::min(pool.size(), start + cfg.batch_size)));
      try {
        StepContext ctx{model, theta, memory, rng, batch.size(), audit ? &audit : nullptr};
        const auto batches = strategy.compose_batch(std::move(batch), ctx);
        Tape tape;
        const ParamVars pv = bind(tape, theta);
        Var total;
        std::vector<ModelOutputs> task_outputs;
        for (std::size_t k = 0; k < batches.size(); ++k) {
          record(batches[k].items);
          auto outs = forward_batch(model, tape, pv, batches[k].items);
          Var l = mean_hybrid_loss(model, batches[k].items, outs);
          if (batches[k].weight != 1.0) l = ops::scale(l, batches[k].weight);
          total = total.valid() ? ops::add(total, l) : l;
          if (k == 0) task_outputs = std::move(outs);
        }
        const Var extra = strategy.extra_loss(tape, pv, batches[0].items, task_outputs, ctx);
        if (extra.valid()) total = ops::add(total, extra);
        tape.backward(total);
        loss_sum += total.value().item();
        ParamVector g = strategy.transform_grad(collect_grad(tape, pv), ctx);
        opt.step(theta, std::move(g));
        ++n_steps;
      } catch (const NumericError& e) {
        std::string where = "train_task: divergence in epoch " + std::to_string(epoch) + ", step " + std::to_string(n_steps);
        if (!cfg.diagnostic_dir.empty()) {
          const std::string path = cfg.diagnostic_dir + "/diverged.ckpt";
          save_checkpoint(path, theta);
          where += " (parameters dumped to " + path + ")";
        }
        throw NumericError(where + ": " + e.what());
      }
    }
    snapshots.push_back(theta);
    if (snapshots.size() > cfg.snapshot_count) snapshots.pop_front();
    const double ter = evaluate_set(model, theta, valid, cfg.valid_decode).wer;
    res.history.push_back({epoch, loss_sum / static_cast<double>(std::max<std::size_t>(n_steps, 1)), ter});
    res.steps += n_steps;
    if (ter < res.best_valid_ter) {
      res.best_valid_ter = ter;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  res.snapshots_averaged = snapshots.size();
  res.theta = snapshot_average({snapshots.begin(), snapshots.end()});
  return res;
}

/// Wraps a task's training split as audited samples.
inline std::vector<Sample> task_samples(const std::vector<Utterance>& train, std::uint64_t task_id,
                                        SampleSource source = SampleSource::Task) {
  std::vector<Sample> out;
  out.reserve(train.size());
  for (const auto& u : train) out.push_back({&u, task_id, source});
  return out;
}

}  // namespace seqcl
