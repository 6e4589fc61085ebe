#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "seqcl/clmetrics/results.hpp"
#include "seqcl/clmetrics/storage.hpp"
#include "seqcl/clstrat/strategy.hpp"
#include "seqcl/error.hpp"
#include "seqcl/exemplar/memory.hpp"
#include "seqcl/harness/train.hpp"
#include "seqcl/lambdatune/lambda_search.hpp"
#include "seqcl/taskforge/task.hpp"

namespace seqcl {

enum class Baseline { None, JT, CJT };

inline Baseline baseline_of(const std::string& method) {
  if (method == "JT") return Baseline::JT;
  if (method == "CJT") return Baseline::CJT;
  return Baseline::None;
}

struct ExperimentConfig {
  std::string method = "FT";  // a CL method or one of the baselines JT / CJT
  StrategyHyper hyper;
  MemoryPolicy memory = MemoryPolicy::growing(500);
  LambdaSearchConfig lambda_search;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
};

struct MemoryReport {
  double wer_memory = 0.0;
  double wer_test = 0.0;
  double ratio = 0.0;  // wer_memory / wer_test
  std::size_t memory_size = 0;
};

struct AccessAudit {
  std::size_t task_reads = 0;
  std::size_t memory_reads = 0;
  std::size_t joint_reads = 0;
  std::size_t foreign_reads = 0;  // utterances of another task read outside the memory
};

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  StrategyHyper hyper;
  MemoryPolicy memory_policy;
  ResultsMatrix R;
  std::vector<StorageLedger> storage;  // state kept after each task (what learning the next task needs)
  std::vector<std::size_t> memory_entries;  // stored utterances after each task
  std::optional<LambdaSearchResult> lambda_search;
  std::optional<MemoryReport> memory_report;
  AccessAudit audit;
  std::vector<std::size_t> epochs;  // epochs run per task
  std::vector<std::string> warnings;
  ParamVector theta;
};

namespace detail {

inline double data_bytes(const std::vector<Utterance>& set) {
  double b = 0.0;
  for (const auto& u : set) b += kBytesPerFloat * static_cast<double>(u.frames.size() + u.tokens.size());
  return b;
}

inline bool same_utterance_present(const Utterance& u, const std::vector<Utterance>& set) {
  for (const auto& v : set)
    if (v == u) return true;
  return false;
}

}  // namespace detail

/// WER of the adapted model on the memory entries of `task_id` and on that
/// task's test set.
inline MemoryReport memory_generalization_report(const HybridModel& model, const ParamVector& theta,
                                                 const ExemplarMemory& memory, std::uint64_t task_id,
                                                 const std::vector<Utterance>& test, const DecodeOptions& opt) {
  std::vector<const Utterance*> mem;
  for (const auto& e : memory.entries())
    if (e.task_id == task_id) mem.push_back(&e.utterance);
  if (mem.empty()) throw ConfigError("memory report: no memory entries for task " + std::to_string(task_id));
  for (const auto* u : mem)
    if (detail::same_utterance_present(*u, test)) throw DataError("memory report: memory overlaps the test set");
  MemoryReport r;
  r.memory_size = mem.size();
  r.wer_memory = evaluate_set(model, theta, mem, opt).wer;
  r.wer_test = evaluate_set(model, theta, test, opt).wer;
  r.ratio = r.wer_test > 0.0 ? r.wer_memory / r.wer_test : 0.0;
  return r;
}

/// Learns the tasks in order with one method (or a joint baseline), filling
/// R row by row. Non-joint methods only ever see the current task's data and
/// the exemplar memory; the audit counts any other read. `on_task` sees the
/// parameters after each task and `agem_audit` every A-GEM projection.
using TaskCallback = std::function<void(std::size_t, const ParamVector&)>;

inline RunResult run_sequence(const ExperimentConfig& exp, const std::vector<TaskDataset>& tasks, std::uint64_t seed,
                              const TaskCallback& on_task = {}, const Strategy::AgemAudit& agem_audit = {}) {
  if (tasks.empty()) throw DataError("run_sequence: no tasks");
  const Baseline baseline = baseline_of(exp.method);
  ModelConfig mcfg = exp.model;
  mcfg.seed = detail::mix_seed(seed, 1);
  const HybridModel model(mcfg);
  for (const auto& t : tasks) {
    if (t.spec.feature_dim() != mcfg.feature_dim || t.spec.alphabet() != mcfg.alphabet)
      throw DataError("run_sequence: task " + std::to_string(t.spec.task_id) + " does not match the model dimensions");
  }

  RunResult res;
  res.method = baseline == Baseline::None ? canonical_method(exp.method) : exp.method;
  res.seed = seed;
  res.hyper = exp.hyper;
  res.memory_policy = exp.memory;
  res.R = ResultsMatrix(tasks.size());

  auto strategy = baseline == Baseline::None ? make_strategy(exp.method, exp.hyper) : make_strategy("FT", {});
  if (agem_audit) strategy->set_agem_audit(agem_audit);
  std::optional<ExemplarMemory> memory;
  if (strategy->uses_memory()) {
    if (exp.memory.amount == 0) throw ConfigError(res.method + " needs a nonempty exemplar memory");
    memory.emplace(exp.memory, detail::mix_seed(seed, 3));
  }
  std::mt19937_64 rng(detail::mix_seed(seed, 2));
  const ParamVector theta0 = model.init();
  ParamVector theta = theta0;
  std::size_t current = 0;
  const DataAudit audit = [&](const Sample& s) {
    switch (s.source) {
      case SampleSource::Task:
        ++res.audit.task_reads;
        if (s.task_id != current) ++res.audit.foreign_reads;
        break;
      case SampleSource::Memory: ++res.audit.memory_reads; break;
      case SampleSource::Joint:
        ++res.audit.joint_reads;
        if (baseline == Baseline::None) ++res.audit.foreign_reads;
        break;
    }
  };

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    current = t;
    std::vector<Sample> train;
    std::vector<Utterance> valid;
    if (baseline != Baseline::None) {
      for (std::size_t j = 0; j <= t; ++j) {
        auto s = task_samples(tasks[j].train, j, SampleSource::Joint);
        train.insert(train.end(), s.begin(), s.end());
        valid.insert(valid.end(), tasks[j].valid.begin(), tasks[j].valid.end());
      }
    } else {
      train = task_samples(tasks[t].train, t);
      valid = tasks[t].valid;
    }
    const bool from_scratch = baseline == Baseline::JT;
    const double factor = (t == 0 || from_scratch) ? exp.train.lr_factor_first : exp.train.lr_factor_later;
    const ParamVector start = from_scratch ? theta0 : theta;
    const ExemplarMemory* mem = memory ? &*memory : nullptr;

    if (t == 1 && strategy->uses_lambda() && !strategy->has_lambda()) {
      const double tau_init = evaluate_set(model, start, valid, exp.train.valid_decode).wer;
      std::mt19937_64 probe_rng(detail::mix_seed(seed, 4));
      auto probe = [&](double lambda, std::size_t epochs) {
        auto s = strategy->clone();
        TrainConfig pc = exp.train;
        pc.max_epochs = epochs;
        pc.patience = epochs;
        pc.snapshot_count = 1;
        if (lambda == 0.0) s = make_strategy("FT", {});
        else s->set_lambda(lambda);
        std::mt19937_64 r = probe_rng;
        const auto out = train_task(model, start, train, valid, *s, mem, pc, factor, r, audit);
        return evaluate_set(model, out.theta, valid, exp.train.valid_decode).wer;
      };
      res.lambda_search = determine_lambda(probe, tau_init, exp.lambda_search);
      for (const auto& w : res.lambda_search->warnings) res.warnings.push_back(w);
      strategy->set_lambda(res.lambda_search->lambda);
    }

    const auto out = train_task(model, start, train, valid, *strategy, mem, exp.train, factor, rng, audit);
    theta = out.theta;
    res.epochs.push_back(out.history.size());
    strategy->on_task_end(model, theta, tasks[t].train, rng);
    if (memory) memory->task_end_update(tasks[t].train, t);
    if (on_task) on_task(t, theta);

    for (std::size_t j = 0; j <= t; ++j) res.R.set(t, j, evaluate_set(model, theta, tasks[j].test, exp.train.test_decode));

    if (t == 1 && memory)
      res.memory_report = memory_generalization_report(model, theta, *memory, 0, tasks[0].test, exp.train.test_decode);

    std::vector<std::pair<std::string, std::size_t>> aux;
    for (const auto& item : strategy->storage()) aux.emplace_back(item.name, item.floats);
    double data = memory ? static_cast<double>(memory->bytes()) : 0.0;
    if (baseline != Baseline::None) {
      data = 0.0;
      for (std::size_t j = 0; j <= t; ++j) data += detail::data_bytes(tasks[j].train);
    }
    StorageLedger ledger = storage_report(model.param_count(), aux, data, baseline != Baseline::JT,
                                         baseline == Baseline::None ? "memory" : "data");
    res.storage.push_back(std::move(ledger));
    res.memory_entries.push_back(memory ? memory->size() : 0);
  }
  if (memory)
    for (const auto& w : memory->warnings()) res.warnings.push_back(w);
  res.theta = theta;
  return res;
}

}  // namespace seqcl
