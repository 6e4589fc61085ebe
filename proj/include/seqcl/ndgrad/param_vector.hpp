#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/tape.hpp"
#include "seqcl/ndgrad/tensor.hpp"

namespace seqcl {

/// Named parameter segments in a fixed order. Every CL penalty, projection and
/// optimizer update treats the concatenation of the segments as one flat θ.
class ParamVector {
 public:
  struct Segment {
    std::string name;
    Tensor value;
  };

  ParamVector() = default;

  void add(std::string name, Tensor value) {
    total_ += value.size();
    segments_.push_back({std::move(name), std::move(value)});
  }

  std::size_t num_segments() const noexcept { return segments_.size(); }
  std::size_t total_len() const noexcept { return total_; }
  bool empty() const noexcept { return segments_.empty(); }

  const Segment& segment(std::size_t i) const { return segments_[i]; }
  Tensor& operator[](std::size_t i) { return segments_[i].value; }
  const Tensor& operator[](std::size_t i) const { return segments_[i].value; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < segments_.size(); ++i)
      if (segments_[i].name == name) return i;
    throw Error("ParamVector: no segment named '" + name + "'");
  }
  const Tensor& at(const std::string& name) const { return segments_[index_of(name)].value; }

  /// Offset of segment i in the flat view.
  std::size_t offset(std::size_t i) const {
    std::size_t off = 0;
    for (std::size_t j = 0; j < i; ++j) off += segments_[j].value.size();
    return off;
  }

  bool same_layout(const ParamVector& o) const {
    if (o.segments_.size() != segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      if (segments_[i].name != o.segments_[i].name || segments_[i].value.shape() != o.segments_[i].value.shape())
        return false;
    }
    return true;
  }

  void require_layout(const ParamVector& o, const char* what) const {
    if (!same_layout(o)) throw ShapeError(std::string(what) + ": parameter layouts differ");
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_);
    for (const auto& s : segments_) out.insert(out.end(), s.value.data().begin(), s.value.data().end());
    return out;
  }

  /// Same layout as *this, filled from `flat`.
  ParamVector unflatten(std::span<const double> flat) const {
    if (flat.size() != total_) {
      throw ShapeError("unflatten: expected " + std::to_string(total_) + " values, got " + std::to_string(flat.size()));
    }
    ParamVector out;
    std::size_t off = 0;
    for (const auto& s : segments_) {
      std::vector<double> d(flat.begin() + static_cast<std::ptrdiff_t>(off),
                            flat.begin() + static_cast<std::ptrdiff_t>(off + s.value.size()));
      off += s.value.size();
      out.add(s.name, Tensor(s.value.shape(), std::move(d)));
    }
    return out;
  }

  ParamVector zeros_like() const {
    ParamVector out;
    for (const auto& s : segments_) out.add(s.name, Tensor(s.value.shape(), 0.0));
    return out;
  }

  template <class F>
  void for_each_value(F&& f) {
    for (auto& s : segments_)
      for (auto& v : s.value.data()) f(v);
  }

  double dot(const ParamVector& o) const {
    require_layout(o, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto a = segments_[i].value.data();
      const auto b = o.segments_[i].value.data();
      for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    }
    return s;
  }

  double squared_norm() const { return dot(*this); }

  /// this += k * o
  ParamVector& axpy(double k, const ParamVector& o) {
    require_layout(o, "axpy");
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      auto a = segments_[i].value.data();
      const auto b = o.segments_[i].value.data();
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += k * b[j];
    }
    return *this;
  }

  ParamVector& scale(double k) {
    for_each_value([k](double& v) { v *= k; });
    return *this;
  }

  bool all_finite() const {
    for (const auto& s : segments_)
      if (!s.value.all_finite()) return false;
    return true;
  }

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    if (a.segments_.size() != b.segments_.size()) return false;
    for (std::size_t i = 0; i < a.segments_.size(); ++i)
      if (a.segments_[i].name != b.segments_[i].name || !(a.segments_[i].value == b.segments_[i].value)) return false;
    return true;
  }

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

/// Parameters bound to a tape, in ParamVector order.
struct ParamVars {
  std::vector<Var> vars;
  const ParamVector* source = nullptr;

  Var operator[](std::size_t i) const { return vars[i]; }
  Var at(const std::string& name) const { return vars[source->index_of(name)]; }
  std::size_t size() const noexcept { return vars.size(); }
};

/// Records every segment of θ as a leaf. With `trainable` false the leaves are
/// constants (forward-only evaluation).
inline ParamVars bind(Tape& tape, const ParamVector& theta, bool trainable = true) {
  ParamVars pv;
  pv.source = &theta;
  pv.vars.reserve(theta.num_segments());
  for (const auto& s : theta.segments()) pv.vars.push_back(trainable ? tape.variable(s.value) : tape.constant(s.value));
  return pv;
}

/// Gradient of the tape's last backward root w.r.t. each bound segment.
inline ParamVector collect_grad(const Tape& tape, const ParamVars& pv) {
  ParamVector g;
  for (std::size_t i = 0; i < pv.size(); ++i) g.add(pv.source->segment(i).name, tape.grad_of(pv[i]));
  return g;
}

/// Evaluates f(tape, θ) -> scalar Var, runs backward, and returns (value, ∂f/∂θ).
/// Parameters the root does not depend on receive exact zeros.
template <class F>
std::pair<double, ParamVector> value_and_grad(const ParamVector& theta, F&& f) {
  Tape tape;
  const ParamVars pv = bind(tape, theta, true);
  const Var root = f(tape, pv);
  if (root.value().size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
  tape.backward(root);
  return {root.value()[0], collect_grad(tape, pv)};
}

template <class F>
ParamVector grad(const ParamVector& theta, F&& f) {
  return value_and_grad(theta, std::forward<F>(f)).second;
}

/// Forward-only evaluation of the same scalar function.
template <class F>
double evaluate(const ParamVector& theta, F&& f) {
  Tape tape;
  const ParamVars pv = bind(tape, theta, false);
  const Var root = f(tape, pv);
  if (root.value().size() != 1) throw ShapeError("evaluate: root must be scalar, got " + shape_str(root.shape()));
  return root.value()[0];
}

}  // namespace seqcl
