#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqcl/clmetrics/results.hpp"
#include "seqcl/clmetrics/storage.hpp"
#include "seqcl/clmetrics/wilcoxon.hpp"
#include "seqcl/error.hpp"
#include "seqcl/harness/experiment.hpp"

namespace seqcl {

inline constexpr int kResultVersion = 1;

using Json = nlohmann::json;

/// Storage that learning the last task requires (state after task T-1).
inline const StorageLedger& final_storage(const RunResult& r) {
  if (r.storage.empty()) throw DataError("result: no storage ledger");
  return r.storage.size() >= 2 ? r.storage[r.storage.size() - 2] : r.storage.back();
}

inline Json ledger_to_json(const StorageLedger& l) {
  Json j;
  j["model_bytes"] = l.model_bytes;
  j["total_bytes"] = l.total_bytes();
  j["model_equivalents"] = l.model_equivalents();
  j["entries"] = Json::array();
  for (const auto& e : l.entries) j["entries"].push_back({{"name", e.name}, {"bytes", e.bytes}});
  return j;
}

inline Json hyper_to_json(const StrategyHyper& h) {
  Json j;
  j["lambda"] = h.lambda ? Json(*h.lambda) : Json(nullptr);
  j["lambda_auto"] = h.lambda_auto;
  j["temperature"] = h.temperature;
  j["importance_samples"] = h.importance_samples;
  j["csqn_pairs"] = h.csqn_pairs;
  j["bt_rank"] = h.bt_rank;
  j["memory_batch"] = h.memory_batch;
  return j;
}

/// Versioned result document. FWT and COV need the FT (and CJT) runs of the
/// same seed; without them they are null.
inline Json result_to_json(const RunResult& r, const ResultsMatrix* ft = nullptr, const ResultsMatrix* cjt = nullptr) {
  const std::size_t t = r.R.tasks();
  Json j;
  j["result_version"] = kResultVersion;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["hypers"] = hyper_to_json(r.hyper);
  j["memory_policy"] = {{"kind", r.memory_policy.kind == MemoryPolicy::Kind::Fixed ? "fixed" : "growing"},
                        {"size", r.memory_policy.amount}};
  Json rows = Json::array(), errs = Json::array(), refs = Json::array();
  for (std::size_t i = 0; i < t; ++i) {
    Json row = Json::array(), erow = Json::array(), rrow = Json::array();
    for (std::size_t k = 0; k <= i; ++k) {
      const auto& c = r.R.cell(i, k);
      row.push_back(c.wer);
      Json e = Json::array(), n = Json::array();
      for (const auto& u : c.per_utterance) {
        e.push_back(u.edits);
        n.push_back(u.ref_len);
      }
      erow.push_back(std::move(e));
      rrow.push_back(std::move(n));
    }
    rows.push_back(std::move(row));
    errs.push_back(std::move(erow));
    refs.push_back(std::move(rrow));
  }
  j["R"] = rows;
  j["per_utterance_errors"] = errs;
  j["ref_lengths"] = refs;
  j["awer"] = awer(r.R, t);
  j["bwt"] = t >= 2 ? Json(bwt(r.R, t)) : Json(nullptr);
  j["fwt"] = (ft && t >= 2) ? Json(fwt(r.R, *ft, t)) : Json(nullptr);
  j["cov"] = nullptr;
  if (ft && cjt && t >= 2) {
    const double a_ft = awer(*ft, t), a_cjt = awer(*cjt, t);
    if (a_ft != a_cjt) j["cov"] = cov(awer(r.R, t), a_ft, a_cjt);
  }
  j["storage_ledger"] = ledger_to_json(final_storage(r));
  j["storage_per_task"] = Json::array();
  for (const auto& l : r.storage) j["storage_per_task"].push_back(l.model_equivalents());
  j["memory_entries_per_task"] = r.memory_entries;
  j["epochs"] = r.epochs;
  j["audit"] = {{"task_reads", r.audit.task_reads},
                {"memory_reads", r.audit.memory_reads},
                {"joint_reads", r.audit.joint_reads},
                {"foreign_reads", r.audit.foreign_reads}};
  j["lambda_search"] = nullptr;
  if (r.lambda_search) {
    Json trace = Json::array();
    for (const auto& p : r.lambda_search->trace) trace.push_back({{"lambda", p.lambda}, {"ter", p.ter}, {"ratio", p.ratio}});
    j["lambda_search"] = {{"lambda", r.lambda_search->lambda},
                          {"tau_init", r.lambda_search->tau_init},
                          {"tau_no_reg", r.lambda_search->tau_no_reg},
                          {"satisfied", r.lambda_search->satisfied},
                          {"trace", trace}};
  }
  j["memory_report"] = nullptr;
  if (r.memory_report) {
    j["memory_report"] = {{"wer_memory", r.memory_report->wer_memory},
                          {"wer_test", r.memory_report->wer_test},
                          {"ratio", r.memory_report->ratio},
                          {"memory_size", r.memory_report->memory_size}};
  }
  j["warnings"] = r.warnings;
  return j;
}

/// The parts of a result document that reports aggregate.
struct ResultRecord {
  std::string method;
  std::uint64_t seed = 0;
  ResultsMatrix R;
  double storage = 0.0;
  std::optional<double> memory_ratio;
};

inline ResultRecord record_from_json(const Json& j) {
  try {
    if (j.at("result_version").get<int>() != kResultVersion)
      throw VersionError("result: unsupported result_version " + j.at("result_version").dump());
    ResultRecord r;
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& rows = j.at("R");
    const auto& errs = j.at("per_utterance_errors");
    const auto& refs = j.at("ref_lengths");
    r.R = ResultsMatrix(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != i + 1) throw DataError("result: R row " + std::to_string(i) + " has the wrong length");
      for (std::size_t k = 0; k <= i; ++k) {
        EvalCell c;
        c.wer = rows[i][k].get<double>();
        const auto& e = errs.at(i).at(k);
        const auto& n = refs.at(i).at(k);
        if (e.size() != n.size()) throw DataError("result: error and length lists differ");
        for (std::size_t u = 0; u < e.size(); ++u) c.per_utterance.push_back({e[u].get<std::size_t>(), n[u].get<std::size_t>()});
        r.R.set(i, k, std::move(c));
      }
    }
    r.storage = j.at("storage_ledger").at("model_equivalents").get<double>();
    if (!j.at("memory_report").is_null()) r.memory_ratio = j.at("memory_report").at("ratio").get<double>();
    return r;
  } catch (const Json::exception& e) {
    throw DataError(std::string("result: malformed document: ") + e.what());
  }
}

inline ResultRecord load_record(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open result '" + path + "'");
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    throw DataError("result '" + path + "': " + e.what());
  }
  return record_from_json(j);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct MethodSummary {
  std::string method;
  std::size_t seeds = 0;
  double awer = 0.0;
  std::optional<double> bwt, fwt, cov;
  double storage = 0.0;
  std::optional<double> p_vs_ft;  // Wilcoxon on per-utterance errors of the final row, pooled over paired seeds
  std::string stars;
};

struct TaskCurve {
  std::string method;
  std::size_t task = 0;  // 1-based
  double awer = 0.0;
  std::optional<double> bwt, fwt, cov;
};

namespace detail {

inline std::map<std::string, std::vector<const ResultRecord*>> by_method(const std::vector<ResultRecord>& recs) {
  std::map<std::string, std::vector<const ResultRecord*>> m;
  for (const auto& r : recs) m[r.method].push_back(&r);
  return m;
}

inline const ResultRecord* find_seed(const std::vector<const ResultRecord*>* group, std::uint64_t seed) {
  if (!group) return nullptr;
  for (const auto* r : *group)
    if (r->seed == seed) return r;
  return nullptr;
}

inline std::optional<double> median_opt(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return median(v);
}

}  // namespace detail

/// Per-task metric curves (medians over seeds) for every method.
inline std::vector<TaskCurve> task_curves(const std::vector<ResultRecord>& recs) {
  const auto groups = detail::by_method(recs);
  const auto* ft = groups.count("FT") ? &groups.at("FT") : nullptr;
  const auto* cjt = groups.count("CJT") ? &groups.at("CJT") : nullptr;
  std::vector<TaskCurve> out;
  for (const auto& [method, runs] : groups) {
    const std::size_t tasks = runs.front()->R.tasks();
    for (std::size_t t = 1; t <= tasks; ++t) {
      std::vector<double> a, b, f, c;
      for (const auto* r : runs) {
        if (r->R.tasks() < t) continue;
        a.push_back(awer(r->R, t));
        if (t < 2) continue;
        b.push_back(bwt(r->R, t));
        const auto* rf = detail::find_seed(ft, r->seed);
        const auto* rc = detail::find_seed(cjt, r->seed);
        if (rf) f.push_back(fwt(r->R, rf->R, t));
        if (rf && rc && awer(rf->R, t) != awer(rc->R, t)) c.push_back(cov(awer(r->R, t), awer(rf->R, t), awer(rc->R, t)));
      }
      out.push_back({method, t, median(a), detail::median_opt(b), detail::median_opt(f), detail::median_opt(c)});
    }
  }
  return out;
}

/// Final-task summary per method (medians over seeds) with significance
/// against FT.
inline std::vector<MethodSummary> summarize(const std::vector<ResultRecord>& recs) {
  const auto groups = detail::by_method(recs);
  const auto* ft = groups.count("FT") ? &groups.at("FT") : nullptr;
  std::vector<MethodSummary> out;
  for (const auto& curve : task_curves(recs)) {
    const auto& runs = groups.at(curve.method);
    if (curve.task != runs.front()->R.tasks()) continue;
    MethodSummary s;
    s.method = curve.method;
    s.seeds = runs.size();
    s.awer = curve.awer;
    s.bwt = curve.bwt;
    s.fwt = curve.fwt;
    s.cov = curve.cov;
    std::vector<double> st;
    for (const auto* r : runs) st.push_back(r->storage);
    s.storage = median(st);
    if (ft && curve.method != "FT") {
      std::vector<double> a, b;
      for (const auto* r : runs) {
        const auto* rf = detail::find_seed(ft, r->seed);
        if (!rf || rf->R.tasks() != r->R.tasks()) continue;
        const std::size_t last = r->R.tasks() - 1;
        for (std::size_t k = 0; k <= last; ++k) {
          const auto ea = r->R.cell(last, k).errors();
          const auto eb = rf->R.cell(last, k).errors();
          if (ea.size() != eb.size()) continue;
          a.insert(a.end(), ea.begin(), ea.end());
          b.insert(b.end(), eb.begin(), eb.end());
        }
      }
      if (!a.empty()) {
        s.p_vs_ft = wilcoxon_signed_rank(a, b).p_value;
        s.stars = significance_stars(*s.p_vs_ft);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {
inline std::string fmt(const std::optional<double>& v, int decimals = 1) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << *v;
  return os.str();
}
}  // namespace detail

/// Table with columns method, AWER (with stars vs FT), BWT, FWT, COV, storage.
inline void write_summary_csv(std::ostream& os, const std::vector<MethodSummary>& rows) {
  os << "method,seeds,awer,stars,bwt,fwt,cov,storage,p_vs_ft\n";
  for (const auto& s : rows) {
    os << s.method << "," << s.seeds << "," << detail::fmt(s.awer) << "," << s.stars << "," << detail::fmt(s.bwt) << ","
       << detail::fmt(s.fwt) << "," << detail::fmt(s.cov) << "," << detail::fmt(s.storage, 2) << ","
       << (s.p_vs_ft ? std::to_string(*s.p_vs_ft) : "") << "\n";
  }
}

inline void write_curves_csv(std::ostream& os, const std::vector<TaskCurve>& rows) {
  os << "method,task_idx,awer,bwt,fwt,cov\n";
  for (const auto& c : rows)
    os << c.method << "," << c.task << "," << detail::fmt(c.awer) << "," << detail::fmt(c.bwt) << "," << detail::fmt(c.fwt)
       << "," << detail::fmt(c.cov) << "\n";
}

}  // namespace seqcl
