#pragma once

#include <random>
#include <string>
#include <vector>

#include "pvrnn/core/adaptation.hpp"
#include "pvrnn/core/encoding.hpp"
#include "pvrnn/deliberation/mixer.hpp"
#include "pvrnn/observer/observer_net.hpp"
#include "pvrnn/train/trainer.hpp"

namespace pvrnn {

struct ObserverDataOptions {
  int steps = 200;
  int discard = 20;
  int reseed_every = 72;     // 0: one free-running rollout
  double noise_sigma = 0.0;  // positional noise added after decoding
  int warmup_steps = 1;
  std::uint64_t seed = 1;
};

/// Decoded prior generation for one trained sequence. With `reseed_every` > 0
/// the context is re-seeded from the sequence's posterior start every that
/// many steps.
inline Rollout primitive_rollout(const NetworkParams& params, const NetworkConfig& cfg,
                                 const AdaptiveWindow& window, int steps, int reseed_every, int warmup) {
  if (steps < 1) throw ConfigError("primitive_rollout: steps must be >= 1");
  if (reseed_every <= 0) return seeded_prior_rollout(params, cfg, window, steps, warmup);
  Rollout out;
  out.initial = initial_state(cfg);
  for (int done = 0; done < steps; done += reseed_every) {
    Rollout part = seeded_prior_rollout(params, cfg, window, std::min(reseed_every, steps - done), warmup);
    for (auto& s : part.steps) out.steps.push_back(std::move(s));
    for (auto& o : part.outputs) out.outputs.push_back(std::move(o));
  }
  return out;
}

inline std::vector<Point2> decode_rollout(const Rollout& r, const NetworkConfig& cfg) {
  const SoftmaxCodec codec(cfg);
  std::vector<Point2> out;
  out.reserve(r.outputs.size());
  for (const auto& f : r.outputs) out.push_back(codec.decode_point(f));
  return out;
}

/// Every full buffer of a path, labeled. A path of n points gives n - buffer + 1
/// samples.
inline std::vector<ObserverSample> path_windows(std::span<const Point2> path, int label,
                                                int buffer = kObserverBuffer) {
  std::vector<ObserverSample> out;
  for (std::size_t end = buffer; end <= path.size(); ++end)
    out.push_back({observer_input(path.subspan(end - buffer, buffer)), label});
  return out;
}

/// Labeled observer windows from each trained sequence's prior generation,
/// first `discard` steps dropped. Labels are sequence indices.
inline std::vector<ObserverSample> observer_dataset(const NetworkParams& params, const NetworkConfig& cfg,
                                                    const std::vector<AdaptiveWindow>& windows,
                                                    const ObserverDataOptions& opt) {
  if (opt.discard < 0 || opt.discard >= opt.steps) throw ConfigError("observer data: discard must be in [0, steps)");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, opt.noise_sigma > 0.0 ? opt.noise_sigma : 1.0);
  std::vector<ObserverSample> out;
  for (std::size_t s = 0; s < windows.size(); ++s) {
    auto path = decode_rollout(primitive_rollout(params, cfg, windows[s], opt.steps, opt.reseed_every, opt.warmup_steps), cfg);
    path.erase(path.begin(), path.begin() + opt.discard);
    if (opt.noise_sigma > 0.0)
      for (auto& p : path) p = clamp_workspace({p.x + noise(rng), p.y + noise(rng)});
    auto w = path_windows(path, static_cast<int>(s));
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

/// Row-normalized confusion matrix (rows: true class, columns: predicted).
inline Mat confusion_matrix(const ObserverNet& net, const std::vector<ObserverSample>& data) {
  Mat counts = Mat::Zero(net.outputs(), net.outputs());
  for (const auto& s : data) {
    std::vector<Point2> buf;
    for (Eigen::Index i = 0; i + 1 < s.input.size(); i += 2) buf.push_back({s.input[i], s.input[i + 1]});
    const auto label = classify(buf, net);
    counts(s.label, label->index) += 1.0;
  }
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    const double total = counts.row(r).sum();
    if (total > 0.0) counts.row(r) /= total;
  }
  return counts;
}

}  // namespace pvrnn
