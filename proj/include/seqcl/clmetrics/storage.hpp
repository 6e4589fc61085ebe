#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "seqcl/error.hpp"

namespace seqcl {

struct StorageEntry {
  std::string name;
  double bytes = 0.0;
};

/// Byte tally of everything a method keeps between tasks, expressed in
/// model equivalents (bytes of one model's parameters).
struct StorageLedger {
  double model_bytes = 0.0;
  std::vector<StorageEntry> entries;

  void add(std::string name, double bytes) {
    if (!(bytes >= 0.0)) throw NumericError("storage: negative byte count for '" + name + "'");
    entries.push_back({std::move(name), bytes});
  }

  double total_bytes() const {
    double t = 0.0;
    for (const auto& e : entries) t += e.bytes;
    return t;
  }

  double model_equivalents() const {
    if (!(model_bytes > 0.0)) throw NumericError("storage: model size must be positive");
    return total_bytes() / model_bytes;
  }

  double bytes_of(const std::string& name) const {
    double t = 0.0;
    for (const auto& e : entries)
      if (e.name == name) t += e.bytes;
    return t;
  }
};

inline constexpr double kBytesPerFloat = 8.0;

/// Ledger of a trained method: the model itself (unless `store_model` is
/// false, as for JT which retrains from scratch), auxiliary tensors in
/// floats, and stored utterances in bytes.
inline StorageLedger storage_report(std::size_t model_params, const std::vector<std::pair<std::string, std::size_t>>& aux_floats,
                                    double memory_bytes, bool store_model = true,
                                    const std::string& memory_name = "memory") {
  StorageLedger l;
  l.model_bytes = kBytesPerFloat * static_cast<double>(model_params);
  if (store_model) l.add("model", l.model_bytes);
  for (const auto& [name, n] : aux_floats) l.add(name, kBytesPerFloat * static_cast<double>(n));
  if (memory_bytes != 0.0) l.add(memory_name, memory_bytes);
  return l;
}

inline double round_to(double v, int decimals) {
  const double s = std::pow(10.0, decimals);
  return std::round(v * s) / s;
}

}  // namespace seqcl
