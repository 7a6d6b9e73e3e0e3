#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pvrnn/core/adaptation.hpp"
#include "pvrnn/core/forward.hpp"
#include "pvrnn/core/params.hpp"
#include "pvrnn/train/adam.hpp"
#include "pvrnn/train/bptt.hpp"

namespace pvrnn {

struct Sequence {
  std::string label;
  std::vector<SoftmaxFrame> frames;
};

struct TrainingSet {
  std::vector<Sequence> sequences;

  void validate(const NetworkConfig& cfg) const {
    if (sequences.empty()) throw ConfigError("training set is empty");
    for (const auto& s : sequences) {
      if (s.frames.size() < 2) throw ConfigError("sequence '" + s.label + "' needs at least 2 steps");
      for (const auto& f : s.frames)
        if (f.dof() != cfg.dof || f.bins() != cfg.softmax_bins)
          throw ConfigError("sequence '" + s.label + "' does not match dof/softmax_bins");
    }
  }
};

struct TrainingOptions {
  AdamSettings adam;
  double clip_norm = 10.0;  // <= 0 disables global-norm clipping
  int warmup_steps = 1;     // posterior steps before prior regeneration
};

struct EpochReport {
  int epoch = 0;
  double post_rec = 0.0;
  double prior_rec = 0.0;
  double regulation = 0.0;  // unweighted KL sum
  double nelbo = 0.0;
};

/// Closed-loop generation for a trained sequence: the first `warmup` steps
/// follow the posterior (eps = 0) with the sequence's adaptation vectors, the
/// rest follow the prior (eps = 0).
inline Rollout seeded_prior_rollout(const NetworkParams& params, const NetworkConfig& cfg,
                                    const AdaptiveWindow& window, int steps, int warmup) {
  if (steps < 1) throw ConfigError("seeded_prior_rollout: steps must be >= 1");
  auto eps = EpsilonSource::zeros();
  Rollout r;
  r.initial = initial_state(cfg);
  const LatentState* prev = &r.initial;
  for (int t = 0; t < steps; ++t) {
    if (t < warmup && t < window.length())
      r.steps.push_back(posterior_step(*prev, window.steps[t], params, cfg, eps));
    else
      r.steps.push_back(prior_step(*prev, params, cfg, eps));
    r.outputs.push_back(decode_output(r.steps.back().layers[0].d, params, cfg));
    prev = &r.steps.back();
  }
  return r;
}

/// Full-batch trainer: every epoch runs a posterior rollout per sequence with
/// fresh epsilon, sums parameter gradients over sequences, and applies Adam to
/// the shared parameters and to each sequence's adaptation vectors.
class Trainer {
 public:
  Trainer(TrainingSet set, NetworkConfig cfg, TrainingOptions opts)
      : set_(std::move(set)), cfg_(std::move(cfg)), opts_(opts), eps_(EpsilonSource::sampled(cfg_.seed)) {
    cfg_.validate();
    set_.validate(cfg_);
    params_ = init_params(cfg_, cfg_.seed);
    for (const auto& s : set_.sequences)
      windows_.push_back(AdaptiveWindow::zeros(cfg_, static_cast<int>(s.frames.size())));
    param_adam_ = AdamState(opts_.adam);
    window_adam_.assign(windows_.size(), AdamState(opts_.adam));
  }

  /// Resume from saved state.
  Trainer(TrainingSet set, NetworkConfig cfg, TrainingOptions opts, NetworkParams params,
          std::vector<AdaptiveWindow> windows, AdamState param_adam, std::vector<AdamState> window_adam,
          int epochs_done)
      : Trainer(std::move(set), std::move(cfg), opts) {
    params_ = std::move(params);
    windows_ = std::move(windows);
    param_adam_ = std::move(param_adam);
    window_adam_ = std::move(window_adam);
    epoch_ = epochs_done;
    if (windows_.size() != set_.sequences.size()) throw ConfigError("resume: window count mismatch");
  }

  /// Runs one epoch. Throws DivergenceError (state untouched) on a non-finite
  /// loss or gradient.
  EpochReport run_epoch() {
    NetworkParams grad = zero_params(cfg_);
    std::vector<AdaptiveWindow> window_grads;
    EpochReport rep;
    rep.epoch = epoch_ + 1;

    for (std::size_t s = 0; s < set_.sequences.size(); ++s) {
      const auto& seq = set_.sequences[s];
      const Rollout roll = posterior_rollout(initial_state(cfg_), windows_[s], params_, cfg_, eps_);
      BpttResult g = bptt_gradients(seq.frames, roll, params_, cfg_);
      accumulate(grad, g.params);
      window_grads.push_back(std::move(g.adapt));

      rep.nelbo += g.terms.nelbo();
      rep.regulation += g.terms.kl_sum;
      for (std::size_t t = 0; t < seq.frames.size(); ++t) rep.post_rec += frame_kl(seq.frames[t], roll.outputs[t]);
      const Rollout prior = seeded_prior_rollout(params_, cfg_, windows_[s],
                                                 static_cast<int>(seq.frames.size()), opts_.warmup_steps);
      for (std::size_t t = 0; t < seq.frames.size(); ++t) rep.prior_rec += frame_kl(seq.frames[t], prior.outputs[t]);
    }

    if (!std::isfinite(rep.nelbo) || !all_finite(grad))
      throw DivergenceError("non-finite loss or gradient at epoch " + std::to_string(rep.epoch));
    for (const auto& wg : window_grads)
      if (!all_finite(wg)) throw DivergenceError("non-finite adaptation gradient at epoch " + std::to_string(rep.epoch));

    if (opts_.clip_norm > 0.0) {
      double sq = squared_norm(tensor_spans(grad));
      for (auto& wg : window_grads) sq += squared_norm(tensor_spans(wg));
      const double norm = std::sqrt(sq);
      if (norm > opts_.clip_norm) {
        const double scale = opts_.clip_norm / norm;
        scale_all(tensor_spans(grad), scale);
        for (auto& wg : window_grads) scale_all(tensor_spans(wg), scale);
      }
    }

    auto ps = tensor_spans(params_);
    auto gs = tensor_spans(grad);
    param_adam_.step(ps, as_const_spans(gs));
    for (std::size_t s = 0; s < windows_.size(); ++s) {
      auto ws = tensor_spans(windows_[s]);
      auto wgs = tensor_spans(window_grads[s]);
      window_adam_[s].step(ws, as_const_spans(wgs));
    }
    ++epoch_;
    return rep;
  }

  int epochs_done() const { return epoch_; }
  const NetworkParams& params() const { return params_; }
  NetworkParams& params() { return params_; }
  const std::vector<AdaptiveWindow>& windows() const { return windows_; }
  const AdamState& param_adam() const { return param_adam_; }
  const std::vector<AdamState>& window_adam() const { return window_adam_; }
  const TrainingSet& training_set() const { return set_; }
  const NetworkConfig& config() const { return cfg_; }
  const TrainingOptions& options() const { return opts_; }

 private:
  static void accumulate(NetworkParams& acc, const NetworkParams& g) {
    auto a = tensor_spans(acc);
    auto b = tensor_spans(g);
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  }

  static double squared_norm(const std::vector<std::span<double>>& spans) {
    double s = 0.0;
    for (const auto& sp : spans)
      for (double v : sp) s += v * v;
    return s;
  }

  static void scale_all(const std::vector<std::span<double>>& spans, double f) {
    for (const auto& sp : spans)
      for (double& v : sp) v *= f;
  }

  TrainingSet set_;
  NetworkConfig cfg_;
  TrainingOptions opts_;
  EpsilonSource eps_;
  NetworkParams params_;
  std::vector<AdaptiveWindow> windows_;
  AdamState param_adam_;
  std::vector<AdamState> window_adam_;
  int epoch_ = 0;
};

struct TrainingResult {
  NetworkParams params;
  std::vector<AdaptiveWindow> windows;
  std::vector<EpochReport> report;
  bool diverged = false;
  std::string diagnostic;
};

/// Trains for `epochs` epochs. On divergence stops early and returns the last
/// good state with `diverged` set.
inline TrainingResult train(const TrainingSet& set, const NetworkConfig& cfg, int epochs,
                            const TrainingOptions& opts = {},
                            const std::function<void(const EpochReport&)>& on_epoch = {}) {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  Trainer trainer(set, cfg, opts);
  TrainingResult out;
  for (int e = 0; e < epochs; ++e) {
    try {
      out.report.push_back(trainer.run_epoch());
    } catch (const DivergenceError& err) {
      out.diverged = true;
      out.diagnostic = err.what();
      break;
    }
    if (on_epoch) on_epoch(out.report.back());
  }
  out.params = trainer.params();
  out.windows = trainer.windows();
  return out;
}

}  // namespace pvrnn
