#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/param_vector.hpp"

namespace seqcl {

/// Inverse-square-root schedule with linear warmup:
/// factor * dim^-0.5 * min(step^-0.5, step * warmup^-1.5).
struct NoamSchedule {
  double factor = 1.0;
  double model_dim = 256.0;
  std::size_t warmup = 200;

  double operator()(std::size_t step) const {
    const double s = static_cast<double>(std::max<std::size_t>(step, 1));
    const double w = static_cast<double>(std::max<std::size_t>(warmup, 1));
    return factor / std::sqrt(model_dim) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 5.0;  // 0 disables clipping
};

class Adam {
 public:
  Adam(const ParamVector& layout, AdamConfig cfg, NoamSchedule schedule)
      : cfg_(cfg), schedule_(schedule), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

  std::size_t steps() const noexcept { return step_; }
  double current_lr() const { return schedule_(step_ + 1); }

  /// One update of θ in place; returns the pre-clipping gradient norm.
  double step(ParamVector& theta, ParamVector g) {
    theta.require_layout(g, "adam");
    if (!g.all_finite()) throw NumericError("adam: non-finite gradient");
    const double norm = std::sqrt(g.squared_norm());
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) g.scale(cfg_.clip_norm / norm);
    ++step_;
    const double lr = schedule_(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t s = 0; s < theta.num_segments(); ++s) {
      auto th = theta[s].data();
      auto m = m_[s].data();
      auto v = v_[s].data();
      const auto gs = g[s].data();
      for (std::size_t i = 0; i < th.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gs[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gs[i] * gs[i];
        th[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    }
    return norm;
  }

 private:
  AdamConfig cfg_;
  NoamSchedule schedule_;
  ParamVector m_, v_;
  std::size_t step_ = 0;
};

}  // namespace seqcl
