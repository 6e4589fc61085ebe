#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "seqcl/clstrat/agem.hpp"
#include "seqcl/clstrat/csqn.hpp"
#include "seqcl/clstrat/curvature.hpp"
#include "seqcl/clstrat/distill.hpp"
#include "seqcl/clstrat/importance.hpp"
#include "seqcl/clstrat/replay.hpp"
#include "seqcl/error.hpp"
#include "seqcl/exemplar/memory.hpp"
#include "seqcl/seqmodel/losses.hpp"
#include "seqcl/seqmodel/model.hpp"

namespace seqcl {

inline constexpr std::array<const char*, 11> kMethodNames{"FT",  "EWC", "MAS", "CSQN", "CSQN-BT", "LWF",
                                                          "ER",  "ER_λ", "BER", "AGEM", "KD"};

inline std::string method_name_list() {
  std::string s;
  for (const char* n : kMethodNames) s += (s.empty() ? "" : ", ") + std::string(n);
  return s;
}

struct StrategyHyper {
  std::optional<double> lambda;
  bool lambda_auto = false;              // λ is set later through set_lambda()
  double temperature = 1.0;              // γ for LWF/KD
  std::size_t importance_samples = 100;  // utterances used by EWC/MAS/CSQN estimators
  std::size_t csqn_pairs = 10;           // K
  std::size_t bt_rank = 1;               // per-block rank kept by CSQN-BT
  std::size_t memory_batch = 0;          // 0: same as the task batch
};

struct StorageItem {
  std::string name;
  std::size_t floats = 0;
};

/// Everything a hook may look at during one optimizer step.
struct StepContext {
  const HybridModel& model;
  const ParamVector& theta;
  const ExemplarMemory* memory;
  std::mt19937_64& rng;
  std::size_t task_batch_size;
  const std::function<void(const Sample&)>* audit = nullptr;

  /// Memory batch drawn by a hook, reported to the audit.
  std::vector<Sample> draw_memory(std::size_t n) {
    auto batch = memory_batch(*memory, n, rng);
    if (audit)
      for (const auto& s : batch) (*audit)(s);
    return batch;
  }
};

/// Per-utterance forward passes of a batch.
inline std::vector<ModelOutputs> forward_batch(const HybridModel& model, Tape& tape, const ParamVars& pv,
                                               const std::vector<Sample>& batch) {
  std::vector<ModelOutputs> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(model.forward(tape, pv, *s.utt));
  return out;
}

/// Mean hybrid loss over a batch given its forward passes.
inline Var mean_hybrid_loss(const HybridModel& model, const std::vector<Sample>& batch,
                            const std::vector<ModelOutputs>& outputs) {
  if (batch.empty()) throw DataError("batch loss: empty batch");
  Var total = hybrid_loss(outputs[0], batch[0].utt->tokens, model.config().ctc_weight);
  for (std::size_t i = 1; i < batch.size(); ++i)
    total = ops::add(total, hybrid_loss(outputs[i], batch[i].utt->tokens, model.config().ctc_weight));
  return ops::scale(total, 1.0 / static_cast<double>(batch.size()));
}

inline Var mean_hybrid_loss(const HybridModel& model, Tape& tape, const ParamVars& pv, const std::vector<Sample>& batch) {
  return mean_hybrid_loss(model, batch, forward_batch(model, tape, pv, batch));
}

/// Common interface of all continual-learning methods. The base class is
/// plain fine-tuning: every hook is the identity.
class Strategy {
 public:
  using AgemAudit = std::function<void(const ParamVector& g, const ParamVector& g_ref, const AgemResult&)>;

  Strategy(std::string name, StrategyHyper hyper) : name_(std::move(name)), hyper_(std::move(hyper)) {}
  virtual ~Strategy() = default;

  const std::string& name() const noexcept { return name_; }
  const StrategyHyper& hyper() const noexcept { return hyper_; }
  std::size_t tasks_consolidated() const noexcept { return tasks_; }

  virtual std::unique_ptr<Strategy> clone() const { return std::make_unique<Strategy>(*this); }

  /// Whether the method is weighted by λ (and λ search applies).
  virtual bool uses_lambda() const { return false; }
  virtual bool uses_memory() const { return false; }
  /// BER: the epoch's training set is the task set merged with the memory.
  virtual bool merges_memory_into_epoch() const { return false; }

  double lambda() const {
    if (!hyper_.lambda) throw ConfigError(name_ + ": λ has not been determined");
    return *hyper_.lambda;
  }
  bool has_lambda() const noexcept { return hyper_.lambda.has_value(); }
  virtual void set_lambda(double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError(name_ + ": λ must be nonnegative");
    hyper_.lambda = lambda;
  }

  virtual std::vector<WeightedBatch> compose_batch(std::vector<Sample> task_batch, StepContext&) {
    return {{std::move(task_batch), 1.0}};
  }

  /// Regularization added to the batch loss; an invalid Var means none.
  virtual Var extra_loss(Tape&, const ParamVars&, const std::vector<Sample>& /*task_batch*/,
                         const std::vector<ModelOutputs>& /*task_outputs*/, StepContext&) {
    return {};
  }

  virtual ParamVector transform_grad(ParamVector g, StepContext&) { return g; }

  /// Consolidation after training on `train_set` ends at parameters θ.
  virtual void on_task_end(const HybridModel&, const ParamVector&, const std::vector<Utterance>&, std::mt19937_64&) {
    ++tasks_;
  }

  /// Auxiliary state that must be stored beside the model, in floats.
  virtual std::vector<StorageItem> storage() const { return {}; }

  /// Persistable state (reserved segment names).
  virtual ParamVector state() const {
    ParamVector s;
    s.add("__strategy.tasks", Tensor::scalar(static_cast<double>(tasks_)));
    return s;
  }
  virtual void load_state(const ParamVector& s, const ParamVector&) {
    tasks_ = static_cast<std::size_t>(s.at("__strategy.tasks").item());
  }

  void set_agem_audit(AgemAudit audit) { audit_ = std::move(audit); }

 protected:
  std::string name_;
  StrategyHyper hyper_;
  std::size_t tasks_ = 0;
  AgemAudit audit_;
};

template <class Derived>
class StrategyBase : public Strategy {
 public:
  using Strategy::Strategy;
  std::unique_ptr<Strategy> clone() const override { return std::make_unique<Derived>(static_cast<const Derived&>(*this)); }
};

/// EWC, MAS, CSQN and CSQN-BT: quadratic penalty around the latest θ^t with
/// accumulated importance Ω^{≤t}.
class PenaltyStrategy : public StrategyBase<PenaltyStrategy> {
 public:
  enum class Kind { EWC, MAS, CSQN, CSQN_BT };

  PenaltyStrategy(std::string name, StrategyHyper hyper, Kind kind)
      : StrategyBase(std::move(name), std::move(hyper)), kind_(kind) {}

  bool uses_lambda() const override { return true; }
  const Curvature& curvature() const noexcept { return curv_; }

  Var extra_loss(Tape&, const ParamVars& pv, const std::vector<Sample>&, const std::vector<ModelOutputs>&,
                 StepContext&) override {
    if (!curv_.finalized()) return {};
    curv_.strength = lambda();
    return quad_penalty(curv_, pv);
  }

  void on_task_end(const HybridModel& model, const ParamVector& theta, const std::vector<Utterance>& train,
                   std::mt19937_64& rng) override {
    ParamVector omega;
    if (kind_ == Kind::MAS) {
      omega = mas_importance(model, theta, train, hyper_.importance_samples, rng);
    } else {
      const auto grads = per_sample_grads(model, theta, train, hyper_.importance_samples, rng);
      omega = fisher_from_grads(grads);
      if ((kind_ == Kind::CSQN || kind_ == Kind::CSQN_BT) && hyper_.csqn_pairs > 0) {
        CsqnOptions opt;
        opt.pairs = hyper_.csqn_pairs;
        LowRankTerm term = csqn_term(omega, grads, opt, rng);
        if (kind_ == Kind::CSQN_BT && term.rank() > 0) term = csqn_bt_reduce(term, std::min(hyper_.bt_rank, term.rank()));
        if (term.rank() > 0) curv_.lowrank.push_back(std::move(term));
      }
    }
    if (curv_.diag.empty()) {
      curv_.diag = omega;
    } else {
      curv_.diag.axpy(1.0, omega);
    }
    curv_.anchor = theta;
    curv_.strength = hyper_.lambda.value_or(0.0);
    ++tasks_;
  }

  std::vector<StorageItem> storage() const override {
    if (!curv_.finalized()) return {};
    std::vector<StorageItem> items{{"importance", curv_.diag.total_len()}};
    std::size_t lr = 0;
    for (const auto& t : curv_.lowrank) lr += t.stored_floats();
    if (lr > 0) items.push_back({"low-rank factors", lr});
    return items;
  }

  ParamVector state() const override {
    ParamVector s = Strategy::state();
    if (curv_.finalized()) {
      const ParamVector c = curvature_to_params(curv_);
      for (const auto& seg : c.segments()) s.add(seg.name, seg.value);
    }
    return s;
  }
  void load_state(const ParamVector& s, const ParamVector& layout) override {
    Strategy::load_state(s, layout);
    if (tasks_ > 0) curv_ = curvature_from_params(s, layout);
  }

 private:
  Kind kind_;
  Curvature curv_;
};

/// LWF (task batch) and KD (memory batch): distillation from the frozen
/// model θ^t, computed on the fly.
class DistillStrategy : public StrategyBase<DistillStrategy> {
 public:
  DistillStrategy(std::string name, StrategyHyper hyper, bool on_memory)
      : StrategyBase(std::move(name), std::move(hyper)), on_memory_(on_memory) {
    if (!(hyper_.temperature > 0.0)) throw ConfigError(name_ + ": temperature must be positive");
  }

  bool uses_lambda() const override { return true; }
  bool uses_memory() const override { return on_memory_; }
  const ParamVector& teacher() const noexcept { return teacher_; }

  Var extra_loss(Tape& tape, const ParamVars& pv, const std::vector<Sample>& task_batch,
                 const std::vector<ModelOutputs>& task_outputs, StepContext& ctx) override {
    if (teacher_.empty()) return {};
    std::vector<Sample> batch;
    std::vector<ModelOutputs> outputs;
    if (on_memory_) {
      if (!ctx.memory || ctx.memory->empty()) throw ConfigError(name_ + ": memory is empty");
      batch = ctx.draw_memory(hyper_.memory_batch ? hyper_.memory_batch : ctx.task_batch_size);
      outputs = forward_batch(ctx.model, tape, pv, batch);
    } else {
      batch = task_batch;
      outputs = task_outputs;
    }
    return distill_batch(ctx.model, batch, outputs);
  }

  /// λ-weighted distillation averaged over the batch.
  Var distill_batch(const HybridModel& model, const std::vector<Sample>& batch, const std::vector<ModelOutputs>& outputs) const {
    const double c = model.config().ctc_weight;
    Var total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const OutputValues t = model.forward_values(teacher_, *batch[i].utt);
      Var term = distill_loss(t, outputs[i], lambda(), hyper_.temperature, c);
      total = total.valid() ? ops::add(total, term) : term;
    }
    return ops::scale(total, 1.0 / static_cast<double>(batch.size()));
  }

  void on_task_end(const HybridModel&, const ParamVector& theta, const std::vector<Utterance>&, std::mt19937_64&) override {
    teacher_ = theta;
    ++tasks_;
  }

  ParamVector state() const override {
    ParamVector s = Strategy::state();
    for (const auto& seg : teacher_.segments()) s.add("__teacher/" + seg.name, seg.value);
    return s;
  }
  void load_state(const ParamVector& s, const ParamVector& layout) override {
    Strategy::load_state(s, layout);
    teacher_ = ParamVector{};
    if (tasks_ > 0)
      for (const auto& seg : layout.segments()) teacher_.add(seg.name, s.at("__teacher/" + seg.name));
  }

 private:
  bool on_memory_;
  ParamVector teacher_;
};

/// ER, ER_λ and BER.
class ReplayStrategy : public StrategyBase<ReplayStrategy> {
 public:
  ReplayStrategy(std::string name, StrategyHyper hyper, ReplayMode mode)
      : StrategyBase(std::move(name), std::move(hyper)), mode_(mode) {
    if (mode_ == ReplayMode::ERLambda && hyper_.lambda && !(*hyper_.lambda > 0.0 && *hyper_.lambda < 1.0))
      throw ConfigError("ER_λ: weight must lie in (0, 1)");
  }

  bool uses_lambda() const override { return mode_ == ReplayMode::ERLambda; }
  bool uses_memory() const override { return true; }
  bool merges_memory_into_epoch() const override { return mode_ == ReplayMode::BER; }
  ReplayMode mode() const noexcept { return mode_; }

  void set_lambda(double lambda) override {
    if (mode_ == ReplayMode::ERLambda && !(lambda > 0.0 && lambda < 1.0))
      throw ConfigError("ER_λ: weight must lie in (0, 1)");
    Strategy::set_lambda(lambda);
  }

  std::vector<WeightedBatch> compose_batch(std::vector<Sample> task_batch, StepContext& ctx) override {
    if (mode_ == ReplayMode::BER || !ctx.memory || ctx.memory->empty()) return {{std::move(task_batch), 1.0}};
    return er_compose(std::move(task_batch), *ctx.memory, mode_, mode_ == ReplayMode::ERLambda ? lambda() : 1.0, ctx.rng,
                      hyper_.memory_batch ? hyper_.memory_batch : ctx.task_batch_size);
  }

 private:
  ReplayMode mode_;
};

/// A-GEM: the step gradient is projected against a memory-batch reference
/// gradient whenever the two interfere.
class AgemStrategy : public StrategyBase<AgemStrategy> {
 public:
  using StrategyBase::StrategyBase;

  bool uses_memory() const override { return true; }

  ParamVector transform_grad(ParamVector g, StepContext& ctx) override {
    if (!ctx.memory || ctx.memory->empty()) return g;
    const auto batch = ctx.draw_memory(hyper_.memory_batch ? hyper_.memory_batch : ctx.task_batch_size);
    const ParamVector g_ref =
        grad(ctx.theta, [&](Tape& t, const ParamVars& pv) { return mean_hybrid_loss(ctx.model, t, pv, batch); });
    AgemResult r = agem_project(g, g_ref);
    if (audit_) audit_(g, g_ref, r);
    return std::move(r.grad);
  }
};

/// Canonical method name for `name` and its aliases, or "" if unknown.
inline std::string canonical_method(const std::string& name) {
  if (name == "ER_lambda" || name == "ER(λ)" || name == "ER(lambda)" || name == "ER-lambda" || name == "ER_λ") return "ER_λ";
  if (name == "A-GEM") return "AGEM";
  for (const char* n : kMethodNames)
    if (name == n) return n;
  return "";
}

inline std::unique_ptr<Strategy> make_strategy(const std::string& requested, StrategyHyper hyper) {
  const std::string name = canonical_method(requested);
  if (name.empty()) throw ConfigError("unknown method '" + requested + "'; valid methods: " + method_name_list());
  const bool weighted = name == "EWC" || name == "MAS" || name == "CSQN" || name == "CSQN-BT" || name == "LWF" ||
                        name == "KD" || name == "ER_λ";
  if (weighted && !hyper.lambda && !hyper.lambda_auto) throw ConfigError(name + " requires λ (a value or auto)");
  if (hyper.lambda && !(*hyper.lambda >= 0.0)) throw ConfigError(name + ": λ must be nonnegative");
  using K = PenaltyStrategy::Kind;
  if (name == "FT") return std::make_unique<Strategy>(name, hyper);
  if (name == "EWC") return std::make_unique<PenaltyStrategy>(name, hyper, K::EWC);
  if (name == "MAS") return std::make_unique<PenaltyStrategy>(name, hyper, K::MAS);
  if (name == "CSQN") return std::make_unique<PenaltyStrategy>(name, hyper, K::CSQN);
  if (name == "CSQN-BT") {
    if (hyper.bt_rank < 1) throw ConfigError("CSQN-BT: per-block rank must be >= 1");
    return std::make_unique<PenaltyStrategy>(name, hyper, K::CSQN_BT);
  }
  if (name == "LWF") return std::make_unique<DistillStrategy>(name, hyper, false);
  if (name == "KD") return std::make_unique<DistillStrategy>(name, hyper, true);
  if (name == "ER") return std::make_unique<ReplayStrategy>(name, hyper, ReplayMode::ER);
  if (name == "ER_λ") return std::make_unique<ReplayStrategy>(name, hyper, ReplayMode::ERLambda);
  if (name == "BER") return std::make_unique<ReplayStrategy>(name, hyper, ReplayMode::BER);
  return std::make_unique<AgemStrategy>(name, hyper);
}

}  // namespace seqcl
