#pragma once

#include <chrono>
#include <memory>
#include <optional>

#include "pvrnn/core/encoding.hpp"
#include "pvrnn/core/forward.hpp"
#include "pvrnn/deliberation/mixer.hpp"
#include "pvrnn/deliberation/window.hpp"

namespace pvrnn {

/// Latest human state seen by the session: cursor position and whether the
/// control key is held.
struct HumanInput {
  Point2 pos;
  bool active = false;
};

struct TickRecord {
  long t = 0;  // 1-based step index
  Point2 robot_intent;
  std::optional<Point2> human_intent;
  bool human_active = false;
  Point2 mixed;
  double nelbo = 0.0;
  int inference_epochs_run = 0;
  double wall_time_ms = 0.0;
  bool inference_reset = false;
};

/// Timing inputs of one tick. `deadline` bounds inference (none: unbounded);
/// `epochs` overrides the configured epoch count, e.g. to replay a recorded
/// session exactly.
struct TickTiming {
  double wall_time_ms = 0.0;
  Deadline deadline;
  std::optional<int> epochs;
};

/// One deliberation-control session: the network generates the next robot
/// intention from its prior, the body enacts the mixed command, and the
/// enacted position is fed back as sensation for error regression inside the
/// sliding window.
class Session {
 public:
  /// `seed_step`, when given, drives the first generated step through the
  /// posterior with those adaptation vectors (start on a learned primitive).
  Session(std::shared_ptr<const NetworkParams> params, NetworkConfig cfg, DeliberationSettings settings,
          MixerConfig mixer, std::uint64_t seed, std::optional<StepAdaptation> seed_step = std::nullopt)
      : params_(std::move(params)),
        cfg_(std::move(cfg)),
        settings_(settings),
        mixer_(mixer),
        codec_(cfg_),
        gen_eps_(EpsilonSource::of(settings.generation_eps, seed)),
        inf_eps_(EpsilonSource::of(settings.inference_eps, seed ^ 0x5851f42d4c957f2dULL)),
        seed_step_(std::move(seed_step)) {
    cfg_.validate();
    settings_.validate();
    mixer_.validate();
    window_ = reset_session(cfg_, settings_.window);
    current_ = window_.anchor;
  }

  TickRecord tick(std::optional<HumanInput> human, const TickTiming& timing = {}) {
    const NetworkParams& params = *params_;
    TickRecord rec;
    rec.t = ++t_;
    rec.wall_time_ms = timing.wall_time_ms;
    const int epochs = timing.epochs.value_or(settings_.epochs);

    const bool seeded = t_ == 1 && seed_step_.has_value();
    LatentState next = seeded ? posterior_step(current_, *seed_step_, params, cfg_, gen_eps_)
                              : prior_step(current_, params, cfg_, gen_eps_);
    rec.robot_intent = codec_.decode_point(decode_output(next.layers[0].d, params, cfg_));

    if (human) {
      rec.human_intent = human->pos;
      rec.human_active = human->active;
    }
    rec.mixed = mix_control(rec.human_active ? rec.human_intent : std::nullopt, rec.robot_intent,
                            prev_mixed_, mixer_);
    prev_mixed_ = rec.mixed;

    std::vector<Vec> eps;
    for (const auto& l : cfg_.layers) eps.push_back(inf_eps_.draw(l.z_units));
    push_sensation(window_, codec_.encode_point(rec.mixed),
                   seeded ? *seed_step_ : zero_step_adaptation(cfg_), std::move(eps), params, cfg_);

    if (window_.full() && settings_.epochs > 0) {
      InferenceResult inf = infer_window(window_, params, cfg_, epochs, settings_.rate, timing.deadline,
                                                 settings_.max_backtracks);
      rec.nelbo = inf.final_nelbo;
      rec.inference_epochs_run = inf.epochs_run;
      rec.inference_reset = inf.reset;
      current_ = inf.context();
    } else {
      rec.nelbo = elbo(window_.buffer, window_rollout(window_, params, cfg_), cfg_).nelbo();
      current_ = std::move(next);
    }
    return rec;
  }

  long steps() const { return t_; }
  const SlidingWindow& window() const { return window_; }
  const LatentState& context() const { return current_; }
  const NetworkConfig& config() const { return cfg_; }
  const DeliberationSettings& settings() const { return settings_; }
  const MixerConfig& mixer() const { return mixer_; }
  const NetworkParams& params() const { return *params_; }

 private:
  std::shared_ptr<const NetworkParams> params_;
  NetworkConfig cfg_;
  DeliberationSettings settings_;
  MixerConfig mixer_;
  SoftmaxCodec codec_;
  EpsilonSource gen_eps_;
  EpsilonSource inf_eps_;
  std::optional<StepAdaptation> seed_step_;
  SlidingWindow window_;
  LatentState current_;
  std::optional<Point2> prev_mixed_;
  long t_ = 0;
};

}  // namespace pvrnn
