#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "seqcl/ndgrad/param_vector.hpp"
#include "seqcl/seqmodel/ctc.hpp"
#include "seqcl/seqmodel/model.hpp"
#include "seqcl/seqmodel/types.hpp"

namespace seqcl {

/// Collapses repeats, then drops blanks.
inline std::vector<int> ctc_collapse(const std::vector<int>& path, int blank = kBlank) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

inline std::vector<int> ctc_greedy(const Tensor& ctc_logprobs) {
  std::vector<int> path(ctc_logprobs.rows());
  for (std::size_t t = 0; t < path.size(); ++t) {
    const auto r = ctc_logprobs.row(t);
    path[t] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return ctc_collapse(path);
}

enum class DecodeMode { CtcGreedy, Hybrid };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::CtcGreedy;
  std::size_t beam = 4;
};

namespace detail {

/// Incremental CTC prefix probabilities (non-blank / blank ending) per frame.
struct CtcPrefixState {
  std::vector<double> r_nonblank;
  std::vector<double> r_blank;
  double prefix_score = 0.0;  // log P(prefix is a prefix of the labelling)
};

inline CtcPrefixState ctc_prefix_init(const Tensor& lp) {
  const std::size_t len = lp.rows();
  CtcPrefixState s{std::vector<double>(len, kNegInf), std::vector<double>(len, kNegInf), 0.0};
  double acc = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    acc += lp.at(t, kBlank);
    s.r_blank[t] = acc;
  }
  return s;
}

inline CtcPrefixState ctc_prefix_extend(const Tensor& lp, const CtcPrefixState& prev, const std::vector<int>& prefix,
                                        int c) {
  const std::size_t len = lp.rows();
  const auto cc = static_cast<std::size_t>(c);
  CtcPrefixState s{std::vector<double>(len, kNegInf), std::vector<double>(len, kNegInf), kNegInf};
  if (prefix.empty()) s.r_nonblank[0] = lp.at(0, cc);
  double psi = s.r_nonblank[0];
  const bool repeat = !prefix.empty() && prefix.back() == c;
  for (std::size_t t = 1; t < len; ++t) {
    const double phi = repeat ? prev.r_blank[t - 1] : log_add(prev.r_blank[t - 1], prev.r_nonblank[t - 1]);
    const double nb = log_add(s.r_nonblank[t - 1], phi);
    s.r_nonblank[t] = nb == kNegInf ? kNegInf : nb + lp.at(t, cc);
    const double b = log_add(s.r_blank[t - 1], s.r_nonblank[t - 1]);
    s.r_blank[t] = b == kNegInf ? kNegInf : b + lp.at(t, kBlank);
    if (phi != kNegInf) psi = log_add(psi, phi + lp.at(t, cc));
  }
  s.prefix_score = psi;
  return s;
}

inline double ctc_prefix_final(const CtcPrefixState& s) { return log_add(s.r_nonblank.back(), s.r_blank.back()); }

/// Next-token log-probabilities after `prefix` given precomputed encoder
/// states [L x h].
inline std::vector<double> next_token_logprobs(const HybridModel& model, const ParamVector& theta, const Tensor& enc,
                                               const std::vector<int>& prefix) {
  Tape tape;
  const ParamVars pv = bind(tape, theta, false);
  std::vector<int> inputs{kStartEnd};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  const Tensor& out = model.decoder(pv, tape.constant(enc), inputs).value();
  const auto last = out.row(out.rows() - 1);
  return {last.begin(), last.end()};
}

inline Tensor encoder_states(const HybridModel& model, const ParamVector& theta, const Tensor& frames) {
  Tape tape;
  const ParamVars pv = bind(tape, theta, false);
  return model.encode(tape, pv, frames).value();
}

}  // namespace detail

/// Greedy decoding with the attention decoder alone: argmax over real tokens
/// and <eos>, stopping at <eos> or after L tokens.
inline std::vector<int> decoder_greedy(const HybridModel& model, const ParamVector& theta, const Tensor& frames) {
  std::vector<int> hyp;
  const std::size_t max_len = frames.rows();
  const Tensor enc = detail::encoder_states(model, theta, frames);
  while (hyp.size() < max_len) {
    const auto lp = detail::next_token_logprobs(model, theta, enc, hyp);
    int best = kStartEnd;
    for (int k = kFirstToken; k < static_cast<int>(lp.size()); ++k)
      if (lp[static_cast<std::size_t>(k)] > lp[static_cast<std::size_t>(best)]) best = k;
    if (best == kStartEnd) break;
    hyp.push_back(best);
  }
  return hyp;
}

/// CTC head log-probabilities only (no decoder pass).
inline Tensor ctc_logprobs(const HybridModel& model, const ParamVector& theta, const Tensor& frames) {
  Tape tape;
  const ParamVars pv = bind(tape, theta, false);
  return model.ctc_head(pv, model.encode(tape, pv, frames)).value();
}

/// Decoder beam search rescored by c * CTC prefix score + (1 - c) * decoder
/// score. Hypotheses are capped at L tokens.
inline std::vector<int> hybrid_beam(const HybridModel& model, const ParamVector& theta, const Tensor& frames,
                                    std::size_t beam) {
  using detail::kNegInf;
  const double c = model.config().ctc_weight;
  const Tensor enc = detail::encoder_states(model, theta, frames);
  Tensor ctc_lp;
  {
    Tape tape;
    const ParamVars pv = bind(tape, theta, false);
    ctc_lp = model.ctc_head(pv, tape.constant(enc)).value();
  }
  const std::size_t max_len = frames.rows();
  beam = std::max<std::size_t>(beam, 1);

  struct Hyp {
    std::vector<int> tokens;
    double dec_score = 0.0;
    detail::CtcPrefixState ctc;
    double score = 0.0;
    bool finished = false;
  };
  auto better = [](const Hyp& a, const Hyp& b) { return a.score > b.score; };

  std::vector<Hyp> live;
  live.push_back({{}, 0.0, c > 0.0 ? detail::ctc_prefix_init(ctc_lp) : detail::CtcPrefixState{}, 0.0, false});
  std::vector<Hyp> ended;

  while (!live.empty() && ended.size() < beam) {
    std::vector<Hyp> cand;
    for (const auto& h : live) {
      const auto lp = detail::next_token_logprobs(model, theta, enc, h.tokens);
      const double ctc_end = c > 0.0 ? detail::ctc_prefix_final(h.ctc) : 0.0;
      if (c == 0.0 || ctc_end != kNegInf) {
        Hyp e{h.tokens, h.dec_score + lp[kStartEnd], {}, 0.0, true};
        e.score = c * ctc_end + (1.0 - c) * e.dec_score;
        cand.push_back(std::move(e));
      }
      if (h.tokens.size() >= max_len) continue;
      for (int k = kFirstToken; k < static_cast<int>(lp.size()); ++k) {
        Hyp n{h.tokens, h.dec_score + lp[static_cast<std::size_t>(k)], {}, 0.0, false};
        double ctc_score = 0.0;
        if (c > 0.0) {
          n.ctc = detail::ctc_prefix_extend(ctc_lp, h.ctc, h.tokens, k);
          ctc_score = n.ctc.prefix_score;
          if (ctc_score == kNegInf) continue;
        }
        n.tokens.push_back(k);
        n.score = c * ctc_score + (1.0 - c) * n.dec_score;
        cand.push_back(std::move(n));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), better);
    if (cand.size() > beam) cand.resize(beam);
    live.clear();
    for (auto& h : cand) (h.finished ? ended : live).push_back(std::move(h));
  }
  if (ended.empty()) ended = std::move(live);
  if (ended.empty()) return {};
  std::stable_sort(ended.begin(), ended.end(), better);
  return ended.front().tokens;
}

inline std::vector<int> decode(const HybridModel& model, const ParamVector& theta, const Tensor& frames,
                               const DecodeOptions& opt = {}) {
  if (opt.mode == DecodeMode::Hybrid) return hybrid_beam(model, theta, frames, opt.beam);
  return ctc_greedy(ctc_logprobs(model, theta, frames));
}

}  // namespace seqcl
