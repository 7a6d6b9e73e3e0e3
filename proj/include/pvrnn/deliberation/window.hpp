#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <vector>

#include "pvrnn/core/adaptation.hpp"
#include "pvrnn/core/forward.hpp"
#include "pvrnn/train/bptt.hpp"

namespace pvrnn {

struct DeliberationSettings {
  int window = 15;          // S^size
  int epochs = 30;          // N^epochs per tick
  double rate = 0.1;        // first trial step of each gradient update
  int max_backtracks = 12;  // step halvings per update; 0 takes the plain step
  double budget_ms = 60.0;
  EpsMode inference_eps = EpsMode::sampled;
  EpsMode generation_eps = EpsMode::zeros;

  void validate() const {
    if (window < 1) throw ConfigError("deliberation window must be >= 1");
    if (epochs < 0) throw ConfigError("deliberation epochs must be >= 0");
    if (!(rate > 0.0)) throw ConfigError("deliberation rate must be > 0");
    if (max_backtracks < 0) throw ConfigError("deliberation max_backtracks must be >= 0");
    if (!(budget_ms > 0.0)) throw ConfigError("deliberation budget_ms must be > 0");
  }
};

/// Recent sensations with their adaptation vectors and epsilon draws, plus the
/// network state just before the oldest buffered step.
struct SlidingWindow {
  int size = 15;
  LatentState anchor;
  std::vector<SoftmaxFrame> buffer;
  AdaptiveWindow adapt;
  std::vector<std::vector<Vec>> eps;  // [step][layer]

  bool full() const { return static_cast<int>(buffer.size()) >= size; }
  int length() const { return static_cast<int>(buffer.size()); }
};

/// Fresh window: anchor at the zero initial state, nothing buffered.
inline SlidingWindow reset_session(const NetworkConfig& cfg, int window_size) {
  if (window_size < 1) throw ConfigError("window size must be >= 1");
  SlidingWindow w;
  w.size = window_size;
  w.anchor = initial_state(cfg);
  return w;
}

namespace detail {

inline EpsilonSource replay_source(const std::vector<std::vector<Vec>>& eps) {
  auto src = EpsilonSource::zeros();
  for (std::size_t t = 0; t < eps.size(); ++t)
    for (const auto& e : eps[t]) src.inject(e);
  return src;
}

}  // namespace detail

/// Posterior rollout over the buffered steps, replaying the stored epsilon.
inline Rollout window_rollout(const SlidingWindow& w, const NetworkParams& params,
                              const NetworkConfig& cfg) {
  auto src = detail::replay_source(w.eps);
  return posterior_rollout(w.anchor, w.adapt, params, cfg, src);
}

/// Appends one sensation. When the buffer exceeds its size the oldest step is
/// folded into the anchor (one posterior step with its own a and epsilon) and
/// dropped. Returns true when a slide happened.
inline bool push_sensation(SlidingWindow& w, SoftmaxFrame frame, StepAdaptation a,
                           std::vector<Vec> eps, const NetworkParams& params,
                           const NetworkConfig& cfg) {
  w.buffer.push_back(std::move(frame));
  w.adapt.steps.push_back(std::move(a));
  w.eps.push_back(std::move(eps));
  if (static_cast<int>(w.buffer.size()) <= w.size) return false;
  auto src = EpsilonSource::zeros();
  for (const auto& e : w.eps.front()) src.inject(e);
  LatentState next = posterior_step(w.anchor, w.adapt.steps.front(), params, cfg, src);
  w.anchor = std::move(next);
  w.buffer.erase(w.buffer.begin());
  w.adapt.steps.erase(w.adapt.steps.begin());
  w.eps.erase(w.eps.begin());
  return true;
}

struct InferenceResult {
  std::vector<double> nelbo_trace;  // N-ELBO before each update
  double final_nelbo = 0.0;
  int epochs_run = 0;
  bool reset = false;  // adaptation vectors were zeroed after a non-finite loss
  Rollout rollout;     // posterior rollout after the last update
  const LatentState& context() const { return rollout.final_state(); }
};

using Deadline = std::optional<std::chrono::steady_clock::time_point>;

namespace detail {

inline void descend(AdaptiveWindow& a, const AdaptiveWindow& grad, double step) {
  for (std::size_t t = 0; t < a.steps.size(); ++t)
    for (std::size_t k = 0; k < a.steps[t].mu.size(); ++k) {
      a.steps[t].mu[k] -= step * grad.steps[t].mu[k];
      a.steps[t].sigma[k] -= step * grad.steps[t].sigma[k];
    }
}

inline double squared_norm(const AdaptiveWindow& g) {
  double acc = 0.0;
  for (const auto& s : g.steps)
    for (std::size_t k = 0; k < s.mu.size(); ++k) acc += s.mu[k].squaredNorm() + s.sigma[k].squaredNorm();
  return acc;
}

}  // namespace detail

/// Error regression inside the window: n_epochs gradient steps of -ELBO on
/// the adaptation vectors only. Network parameters are read-only.
///
/// Each step starts at `rate` and is halved (up to `max_backtracks` times)
/// until it gives a sufficient decrease of -ELBO (Armijo, c = 1e-4); if no
/// trial qualifies the vectors stay put for that epoch. `max_backtracks` = 0
/// takes the plain step a -= rate * grad unconditionally. Stops early once
/// `deadline` has passed.
inline InferenceResult infer_window(SlidingWindow& w, const NetworkParams& params,
                                    const NetworkConfig& cfg, int n_epochs, double rate,
                                    Deadline deadline = std::nullopt, int max_backtracks = 12) {
  constexpr double kArmijo = 1e-4;
  InferenceResult res;
  for (int e = 0; e < n_epochs; ++e) {
    if (deadline && std::chrono::steady_clock::now() >= *deadline) break;
    const Rollout roll = window_rollout(w, params, cfg);
    const BpttResult g = bptt_gradients(w.buffer, roll, params, cfg, GradientScope::adaptation_only);
    const double current = g.terms.nelbo();
    res.nelbo_trace.push_back(current);
    if (!std::isfinite(current) || !all_finite(g.adapt)) {
      set_zero(w.adapt);
      res.reset = true;
      break;
    }
    if (max_backtracks == 0) {
      detail::descend(w.adapt, g.adapt, rate);
    } else {
      const double g2 = detail::squared_norm(g.adapt);
      double step = rate;
      for (int h = 0; h <= max_backtracks; ++h, step *= 0.5) {
        SlidingWindow trial = w;
        detail::descend(trial.adapt, g.adapt, step);
        const double next = elbo(trial.buffer, window_rollout(trial, params, cfg), cfg).nelbo();
        if (std::isfinite(next) && next <= current - kArmijo * step * g2) {
          w.adapt = std::move(trial.adapt);
          break;
        }
      }
    }
    ++res.epochs_run;
  }
  res.rollout = window_rollout(w, params, cfg);
  res.final_nelbo = w.buffer.empty() ? 0.0 : elbo(w.buffer, res.rollout, cfg).nelbo();
  if (!std::isfinite(res.final_nelbo)) {
    set_zero(w.adapt);
    res.reset = true;
    res.rollout = window_rollout(w, params, cfg);
    res.final_nelbo = elbo(w.buffer, res.rollout, cfg).nelbo();
  }
  return res;
}

}  // namespace pvrnn
