#pragma once

#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/param_vector.hpp"

namespace seqcl {

/// Elementwise arithmetic mean of parameter snapshots with identical layouts.
inline ParamVector snapshot_average(const std::vector<ParamVector>& snapshots) {
  if (snapshots.empty()) throw ConfigError("snapshot_average: no snapshots");
  // Running mean: identical snapshots average to themselves bit-exactly.
  ParamVector avg = snapshots.front();
  for (std::size_t k = 1; k < snapshots.size(); ++k) {
    const auto& s = snapshots[k];
    avg.require_layout(s, "snapshot_average");
    const double w = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < avg.num_segments(); ++i) {
      auto a = avg[i].data();
      const auto b = s[i].data();
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += (b[j] - a[j]) * w;
    }
  }
  return avg;
}

}  // namespace seqcl
