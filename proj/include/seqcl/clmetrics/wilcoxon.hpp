#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "seqcl/error.hpp"

namespace seqcl {

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;   // two-sided
  std::size_t n = 0;      // nonzero differences
  bool exact = false;
  bool all_zero = false;
};

/// Average ranks (1-based) of |d| for nonzero d, plus the tie-group sizes.
inline std::vector<double> signed_rank_abs_ranks(const std::vector<double>& absd, std::vector<std::size_t>* ties = nullptr) {
  std::vector<std::size_t> order(absd.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return absd[a] < absd[b]; });
  std::vector<double> ranks(absd.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && absd[order[j + 1]] == absd[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    if (ties) ties->push_back(j - i + 1);
    i = j + 1;
  }
  return ranks;
}

/// Exact two-sided p-value of W+ under the sign-flip null, by dynamic
/// programming over doubled (integer) ranks.
inline double wilcoxon_exact_p(const std::vector<double>& ranks, double w_plus) {
  std::vector<long> r2;
  long total = 0;
  for (double r : ranks) {
    r2.push_back(std::lround(2.0 * r));
    total += r2.back();
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long r : r2) {
    for (long s = reach; s >= 0; --s)
      if (count[s] != 0.0) count[s + r] += count[s];
    reach += r;
  }
  const long w = std::lround(2.0 * w_plus);
  const double n_total = std::ldexp(1.0, static_cast<int>(ranks.size()));
  double le = 0.0, ge = 0.0;
  for (long s = 0; s <= total; ++s) {
    if (s <= w) le += count[s];
    if (s >= w) ge += count[s];
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / n_total);
}

/// Paired two-sided Wilcoxon signed-rank test on per-item values (e.g.
/// errors per utterance). Zero differences are dropped and ties get average
/// ranks. Exact for n <= exact_limit, otherwise normal approximation with
/// tie and continuity corrections.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                           std::size_t exact_limit = 25) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon: series have different lengths");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  WilcoxonResult r;
  r.n = d.size();
  if (d.empty()) {
    r.all_zero = true;
    r.exact = true;
    return r;
  }
  std::vector<double> absd(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) absd[i] = std::abs(d[i]);
  std::vector<std::size_t> ties;
  const auto ranks = signed_rank_abs_ranks(absd, &ties);
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.statistic = std::min(r.w_plus, r.w_minus);

  const double n = static_cast<double>(r.n);
  if (r.n <= exact_limit) {
    r.exact = true;
    r.p_value = wilcoxon_exact_p(ranks, r.w_plus);
    return r;
  }
  const double mean = n * (n + 1.0) / 4.0;
  double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  for (auto t : ties) var -= (std::pow(static_cast<double>(t), 3) - static_cast<double>(t)) / 48.0;
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

template <class A, class B>
WilcoxonResult wilcoxon_signed_rank(const std::vector<A>& a, const std::vector<B>& b) {
  return wilcoxon_signed_rank(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
}

inline std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

}  // namespace seqcl
