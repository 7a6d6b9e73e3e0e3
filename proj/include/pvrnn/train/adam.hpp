#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pvrnn/error.hpp"

namespace pvrnn {

struct AdamSettings {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for a list of tensors, laid out like the tensor list
/// handed to `step`.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamSettings settings) : settings_(settings) {}

  const AdamSettings& settings() const { return settings_; }
  std::uint64_t step_count() const { return steps_; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_step_count(std::uint64_t n) { steps_ = n; }

  /// Bias-corrected Adam descent step: x -= alpha * m_hat / (sqrt(v_hat) + eps).
  void step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads) {
    if (params.size() != grads.size()) throw ConfigError("adam: tensor count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ConfigError("adam: state layout does not match tensors");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].size() != grads[i].size() || m_[i].size() != params[i].size())
        throw ConfigError("adam: tensor shape mismatch");
      for (double gv : grads[i])
        if (!std::isfinite(gv)) throw DivergenceError("adam: non-finite gradient");
    }
    ++steps_;
    const auto& s = settings_;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      auto& x = params[i];
      for (std::size_t j = 0; j < x.size(); ++j) {
        m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
        v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
        x[j] -= s.alpha * (m[j] / c1) / (std::sqrt(v[j] / c2) + s.epsilon);
      }
    }
  }

 private:
  AdamSettings settings_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

template <class Mutable>
std::vector<std::span<const double>> as_const_spans(const std::vector<Mutable>& spans) {
  std::vector<std::span<const double>> out;
  out.reserve(spans.size());
  for (const auto& s : spans) out.emplace_back(s.data(), s.size());
  return out;
}

}  // namespace pvrnn
