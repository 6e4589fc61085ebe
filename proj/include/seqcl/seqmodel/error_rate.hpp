#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "seqcl/error.hpp"

namespace seqcl {

struct EditCount {
  std::size_t edits = 0;
  std::size_t ref_len = 0;

  double rate() const { return static_cast<double>(edits) / static_cast<double>(ref_len); }
  friend bool operator==(const EditCount&, const EditCount&) = default;
};

/// Unit-cost Levenshtein distance.
inline std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline EditCount error_rate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw DataError("error_rate: empty reference");
  return {edit_distance(hyp, ref), ref.size()};
}

/// Corpus rate sum(edits) / sum(ref_len), as a percentage.
inline double corpus_rate_percent(const std::vector<EditCount>& counts) {
  std::size_t e = 0, n = 0;
  for (const auto& c : counts) {
    e += c.edits;
    n += c.ref_len;
  }
  if (n == 0) throw DataError("corpus_rate: no reference tokens");
  return 100.0 * static_cast<double>(e) / static_cast<double>(n);
}

}  // namespace seqcl
