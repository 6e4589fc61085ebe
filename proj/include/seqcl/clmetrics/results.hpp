#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/seqmodel/error_rate.hpp"

namespace seqcl {

/// One evaluation of a model on a task's test set.
struct EvalCell {
  double wer = 0.0;                   // percent
  std::vector<EditCount> per_utterance;

  std::vector<double> errors() const {
    std::vector<double> e;
    e.reserve(per_utterance.size());
    for (const auto& c : per_utterance) e.push_back(static_cast<double>(c.edits));
    return e;
  }
};

inline EvalCell make_cell(std::vector<EditCount> counts) {
  EvalCell c;
  c.wer = corpus_rate_percent(counts);
  c.per_utterance = std::move(counts);
  return c;
}

/// Lower-triangular grid R[i][j]: WER on task j after learning through task
/// i (0-based, j <= i).
class ResultsMatrix {
 public:
  ResultsMatrix() = default;
  explicit ResultsMatrix(std::size_t tasks) : cells_(tasks) {
    for (std::size_t i = 0; i < tasks; ++i) cells_[i].resize(i + 1);
  }

  std::size_t tasks() const noexcept { return cells_.size(); }

  void set(std::size_t i, std::size_t j, EvalCell cell) {
    check(i, j);
    if (!(cell.wer >= 0.0)) throw NumericError("results: WER must be nonnegative");
    cells_[i][j] = std::move(cell);
  }
  void set(std::size_t i, std::size_t j, double wer) { set(i, j, EvalCell{wer, {}}); }

  bool has(std::size_t i, std::size_t j) const {
    check(i, j);
    return cells_[i][j].has_value();
  }
  const EvalCell& cell(std::size_t i, std::size_t j) const {
    check(i, j);
    if (!cells_[i][j]) throw DataError("results: cell (" + std::to_string(i) + ", " + std::to_string(j) + ") is empty");
    return *cells_[i][j];
  }
  double operator()(std::size_t i, std::size_t j) const { return cell(i, j).wer; }

  bool row_complete(std::size_t i) const {
    if (i >= tasks()) return false;
    for (const auto& c : cells_[i])
      if (!c) return false;
    return true;
  }

  /// Builds from a nested list of WERs (row i holds i+1 values).
  static ResultsMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    ResultsMatrix r(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != i + 1) throw ShapeError("results: row " + std::to_string(i) + " must hold " + std::to_string(i + 1) + " values");
      for (std::size_t j = 0; j <= i; ++j) r.set(i, j, rows[i][j]);
    }
    return r;
  }

 private:
  void check(std::size_t i, std::size_t j) const {
    if (i >= tasks() || j > i) throw ShapeError("results: cell (" + std::to_string(i) + ", " + std::to_string(j) + ") outside the lower triangle");
  }
  std::vector<std::vector<std::optional<EvalCell>>> cells_;
};

/// Mean WER over tasks 1..T after learning task T (T is 1-based).
inline double awer(const ResultsMatrix& r, std::size_t t) {
  if (t < 1 || !r.row_complete(t - 1)) throw DataError("awer: row " + std::to_string(t) + " is incomplete");
  double s = 0.0;
  for (std::size_t j = 0; j < t; ++j) s += r(t - 1, j);
  return s / static_cast<double>(t);
}

/// (1/(T-1)) Σ_{i<T} -(R[T][i] - R[i][i]); negative values mean forgetting.
inline double bwt(const ResultsMatrix& r, std::size_t t) {
  if (t < 2) throw DataError("bwt: needs at least two tasks");
  if (!r.row_complete(t - 1)) throw DataError("bwt: row " + std::to_string(t) + " is incomplete");
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) s -= r(t - 1, i) - r(i, i);
  return s / static_cast<double>(t - 1);
}

/// (1/(T-1)) Σ_{i=2..T} -(R[i][i] - R_ft[i][i]); positive values mean the
/// method learns new tasks better than fine-tuning.
inline double fwt(const ResultsMatrix& r, const ResultsMatrix& r_ft, std::size_t t) {
  if (t < 2) throw DataError("fwt: needs at least two tasks");
  if (r_ft.tasks() < t) throw DataError("fwt: fine-tuning reference is missing tasks");
  double s = 0.0;
  for (std::size_t i = 1; i < t; ++i) s -= r(i, i) - r_ft(i, i);
  return s / static_cast<double>(t - 1);
}

/// Percentage of the FT -> CJT gap closed by the method.
inline double cov(double awer_m, double awer_ft, double awer_cjt) {
  const double gap = awer_ft - awer_cjt;
  if (gap == 0.0) throw NumericError("cov: FT and CJT have the same AWER");
  return 100.0 * (awer_ft - awer_m) / gap;
}

}  // namespace seqcl
