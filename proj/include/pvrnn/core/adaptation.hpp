#pragma once

#include <span>
#include <string>
#include <vector>

#include "pvrnn/core/config.hpp"
#include "pvrnn/core/params.hpp"

namespace pvrnn {

/// Posterior adaptation vectors of one time step, one entry per layer.
struct StepAdaptation {
  std::vector<Vec> mu;
  std::vector<Vec> sigma;
};

inline StepAdaptation zero_step_adaptation(const NetworkConfig& cfg) {
  StepAdaptation s;
  for (const auto& l : cfg.layers) {
    s.mu.push_back(Vec::Zero(l.z_units));
    s.sigma.push_back(Vec::Zero(l.z_units));
  }
  return s;
}

/// Adaptation vectors a_mu / a_sigma for a contiguous run of steps.
/// steps[0] belongs to the first step after the rollout's initial state.
struct AdaptiveWindow {
  std::vector<StepAdaptation> steps;

  int length() const { return static_cast<int>(steps.size()); }

  static AdaptiveWindow zeros(const NetworkConfig& cfg, int length) {
    AdaptiveWindow w;
    w.steps.assign(static_cast<std::size_t>(length), zero_step_adaptation(cfg));
    return w;
  }
};

template <class Window, class Fn>
void visit_adaptation(Window& w, Fn&& fn) {
  for (std::size_t t = 0; t < w.steps.size(); ++t) {
    for (std::size_t k = 0; k < w.steps[t].mu.size(); ++k) {
      const std::string p = "t" + std::to_string(t) + ".layer" + std::to_string(k) + ".";
      fn(p + "a_mu", w.steps[t].mu[k]);
      fn(p + "a_sigma", w.steps[t].sigma[k]);
    }
  }
}

inline std::vector<std::span<double>> tensor_spans(AdaptiveWindow& w) {
  std::vector<std::span<double>> out;
  visit_adaptation(w, [&](const std::string&, Vec& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

inline void set_zero(AdaptiveWindow& w) {
  for (auto& s : w.steps) {
    for (auto& v : s.mu) v.setZero();
    for (auto& v : s.sigma) v.setZero();
  }
}

inline bool all_finite(const AdaptiveWindow& w) {
  for (const auto& s : w.steps) {
    for (const auto& v : s.mu)
      if (!v.allFinite()) return false;
    for (const auto& v : s.sigma)
      if (!v.allFinite()) return false;
  }
  return true;
}

}  // namespace pvrnn
