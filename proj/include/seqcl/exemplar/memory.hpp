#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/seqmodel/types.hpp"
#include "seqcl/taskforge/dataset_io.hpp"

namespace seqcl {

/// Unbiased integer in [0, n) from the raw engine output (no
/// implementation-defined distribution, so streams match across stdlibs).
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t range = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % range);
}

struct ExemplarSample {
  std::vector<std::size_t> indices;  // into the train set, in draw order
  std::size_t eligible = 0;
  bool short_supply = false;  // fewer eligible utterances than requested
};

/// Uniform draw without replacement among utterances whose token length
/// exceeds 0.40 x the mean token length of `train_set`.
inline ExemplarSample sample_exemplars(const std::vector<Utterance>& train_set, std::size_t n, std::mt19937_64& rng,
                                       double length_factor = 0.40) {
  if (train_set.empty()) throw DataError("sample_exemplars: empty training set");
  double mean = 0.0;
  for (const auto& u : train_set) mean += static_cast<double>(u.tokens.size());
  mean /= static_cast<double>(train_set.size());
  const double threshold = length_factor * mean;

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (static_cast<double>(train_set[i].tokens.size()) > threshold) eligible.push_back(i);
  if (eligible.empty()) throw DataError("sample_exemplars: no utterance passes the length filter");

  ExemplarSample out;
  out.eligible = eligible.size();
  const std::size_t take = std::min(n, eligible.size());
  out.short_supply = take < n;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + uniform_index(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    out.indices.push_back(eligible[i]);
  }
  return out;
}

struct MemoryPolicy {
  enum class Kind { Growing, Fixed };
  Kind kind = Kind::Growing;
  std::size_t amount = 500;  // exemplars per task (growing) or capacity (fixed)

  static MemoryPolicy growing(std::size_t per_task) { return {Kind::Growing, per_task}; }
  static MemoryPolicy fixed(std::size_t capacity) { return {Kind::Fixed, capacity}; }
  friend bool operator==(const MemoryPolicy&, const MemoryPolicy&) = default;
};

/// Rehearsal memory filled at the end of each task.
class ExemplarMemory {
 public:
  struct Entry {
    Utterance utterance;
    std::uint64_t task_id = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  ExemplarMemory() = default;
  ExemplarMemory(MemoryPolicy policy, std::uint64_t seed) : policy_(policy), rng_(seed) {}

  const MemoryPolicy& policy() const noexcept { return policy_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t tasks_seen() const noexcept { return task_order_.size(); }
  const std::vector<std::uint64_t>& task_order() const noexcept { return task_order_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  std::size_t count_for_task(std::uint64_t task) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [task](const Entry& e) { return e.task_id == task; }));
  }

  bool contains_task(std::uint64_t task) const { return count_for_task(task) > 0; }

  /// Per-task quota after `tasks` tasks under the fixed policy: floor(C/t),
  /// remainder to the earliest tasks.
  static std::size_t fixed_quota(std::size_t capacity, std::size_t tasks, std::size_t position) {
    return capacity / tasks + (position < capacity % tasks ? 1 : 0);
  }

  /// Adds exemplars of a finished task. Growing: `policy.amount` new ones.
  /// Fixed: old tasks are shrunk to their quota by uniform random eviction,
  /// then the new task's quota is inserted.
  void task_end_update(const std::vector<Utterance>& train_set, std::uint64_t task_id) {
    if (std::find(task_order_.begin(), task_order_.end(), task_id) != task_order_.end())
      throw ConfigError("memory: task " + std::to_string(task_id) + " already stored");
    task_order_.push_back(task_id);
    std::size_t quota = policy_.amount;
    if (policy_.kind == MemoryPolicy::Kind::Fixed) {
      const std::size_t t = task_order_.size();
      for (std::size_t pos = 0; pos + 1 < t; ++pos) evict_to(task_order_[pos], fixed_quota(policy_.amount, t, pos));
      quota = fixed_quota(policy_.amount, t, t - 1);
    }
    if (quota == 0) return;
    const ExemplarSample s = sample_exemplars(train_set, quota, rng_);
    if (s.short_supply) {
      warnings_.push_back("memory: task " + std::to_string(task_id) + " has only " + std::to_string(s.eligible) +
                          " eligible utterances for a quota of " + std::to_string(quota));
    }
    for (auto i : s.indices) entries_.push_back({train_set[i], task_id});
  }

  /// Uniform draws with replacement across all entries.
  std::vector<const Entry*> sample_minibatch(std::size_t batch_size, std::mt19937_64& rng) const {
    if (entries_.empty()) throw ConfigError("memory: cannot sample from an empty memory");
    std::vector<const Entry*> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(&entries_[uniform_index(rng, entries_.size())]);
    return batch;
  }

  /// Bytes of stored exemplars: f64 frames plus one u64 per token.
  std::size_t bytes() const {
    std::size_t b = 0;
    for (const auto& e : entries_) b += 8 * e.utterance.frames.size() + 8 * e.utterance.tokens.size();
    return b;
  }

  void write(std::ostream& os) const {
    io::write_data_header(os, "memory");
    io::BinaryWriter w(os);
    w.u64(policy_.kind == MemoryPolicy::Kind::Fixed ? 1 : 0);
    w.u64(policy_.amount);
    w.u64(task_order_.size());
    for (auto t : task_order_) w.u64(t);
    w.u64(entries_.size());
    for (const auto& e : entries_) {
      w.u64(e.task_id);
      w.utterance(e.utterance);
    }
    if (!os) throw DataError("memory: write failed");
  }

  /// Restores entries and policy; the sampling stream restarts from `seed`.
  static ExemplarMemory read(std::istream& is, std::uint64_t seed = 0) {
    io::read_data_header(is, "memory");
    io::BinaryReader r(is, "memory");
    const auto kind = r.u64();
    if (kind > 1) throw DataError("memory: unknown policy " + std::to_string(kind));
    const auto amount = r.count();
    ExemplarMemory m({kind == 1 ? MemoryPolicy::Kind::Fixed : MemoryPolicy::Kind::Growing, amount}, seed);
    const auto tasks = r.count(1 << 20);
    for (std::size_t i = 0; i < tasks; ++i) m.task_order_.push_back(r.u64());
    const auto n = r.count();
    for (std::size_t i = 0; i < n; ++i) {
      Entry e;
      e.task_id = r.u64();
      e.utterance = r.utterance();
      m.entries_.push_back(std::move(e));
    }
    r.expect_end();
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write(os);
  }

  static ExemplarMemory load(const std::string& path, std::uint64_t seed = 0) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read(is, seed);
  }

 private:
  void evict_to(std::uint64_t task, std::size_t quota) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].task_id == task) idx.push_back(i);
    if (idx.size() <= quota) return;
    // Choose the survivors uniformly, then drop the rest preserving order.
    for (std::size_t i = 0; i < quota; ++i) std::swap(idx[i], idx[i + uniform_index(rng_, idx.size() - i)]);
    std::vector<bool> drop(entries_.size(), false);
    for (std::size_t i = quota; i < idx.size(); ++i) drop[idx[i]] = true;
    std::vector<Entry> kept;
    kept.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (!drop[i]) kept.push_back(std::move(entries_[i]));
    entries_ = std::move(kept);
  }

  MemoryPolicy policy_;
  std::mt19937_64 rng_{0};
  std::vector<Entry> entries_;
  std::vector<std::uint64_t> task_order_;
  std::vector<std::string> warnings_;
};

}  // namespace seqcl
