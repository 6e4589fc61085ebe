#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "seqcl/error.hpp"

namespace seqcl {

struct LambdaSearchConfig {
  double lambda0 = 1e4;
  double a = 0.85;
  double p = 0.10;
  std::size_t probe_epochs = 5;
  double lambda_min = 0.0;  // 0: use 1e-6 * lambda0

  double floor() const { return lambda_min > 0.0 ? lambda_min : 1e-6 * lambda0; }

  void validate() const {
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("lambda search: a must lie in (0, 1)");
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("lambda search: p must lie in (0, 1)");
    if (!(lambda0 > floor() && floor() > 0.0)) throw ConfigError("lambda search: need lambda0 > lambda_min > 0");
    if (probe_epochs < 1) throw ConfigError("lambda search: probe_epochs must be >= 1");
  }

  /// Upper bound on regularized probes: ceil(log_p(λ_min/λ0)) + 1.
  std::size_t max_probes() const {
    return static_cast<std::size_t>(std::ceil(std::log(floor() / lambda0) / std::log(p) - 1e-12)) + 1;
  }
};

struct LambdaProbe {
  double lambda = 0.0;
  double ter = 0.0;
  double ratio = 0.0;
};

struct LambdaSearchResult {
  double lambda = 0.0;
  double tau_init = 0.0;
  double tau_no_reg = 0.0;
  std::vector<LambdaProbe> trace;  // regularized probes only
  std::vector<std::string> warnings;
  bool satisfied = false;  // the returned λ met the closure criterion

  void write_csv(std::ostream& os) const {
    os << "lambda,ter,ratio\n";
    os << 0 << "," << tau_no_reg << "," << 1 << "\n";
    for (const auto& p : trace) os << p.lambda << "," << p.ter << "," << p.ratio << "\n";
  }
};

/// Trainer probe: TER on the new task's validation set after training for
/// `epochs` from the current model with regularization weight λ.
using LambdaProbeFn = std::function<double(double lambda, std::size_t epochs)>;

/// Walks λ0, pλ0, p²λ0, ... and returns the first λ whose probe closes more
/// than a fraction `a` of the gap between τ_init and τ_no_reg.
inline LambdaSearchResult determine_lambda(const LambdaProbeFn& probe, double tau_init, const LambdaSearchConfig& cfg) {
  cfg.validate();
  auto checked = [](double ter, double lambda) {
    if (!std::isfinite(ter)) throw NumericError("lambda search: probe at λ=" + std::to_string(lambda) + " returned a non-finite TER");
    return ter;
  };
  LambdaSearchResult r;
  r.tau_init = checked(tau_init, 0.0);
  r.tau_no_reg = checked(probe(0.0, cfg.probe_epochs), 0.0);
  if (!(r.tau_no_reg < r.tau_init)) {
    r.lambda = cfg.lambda0;
    r.warnings.push_back("lambda search: training without regularization does not improve on the initial TER; using λ0");
    return r;
  }
  const double gap = r.tau_no_reg - r.tau_init;
  for (int k = 0;; ++k) {
    const double lambda = cfg.lambda0 * std::pow(cfg.p, k);
    if (lambda < cfg.floor() * (1.0 - 1e-9)) {
      r.lambda = cfg.floor();
      r.warnings.push_back("lambda search: criterion not met above λ_min; using λ_min");
      return r;
    }
    const double ter = checked(probe(lambda, cfg.probe_epochs), lambda);
    const double ratio = (ter - r.tau_init) / gap;
    r.trace.push_back({lambda, ter, ratio});
    if (ratio > cfg.a) {
      r.lambda = lambda;
      r.satisfied = true;
      return r;
    }
  }
}

}  // namespace seqcl
