#pragma once

#include <string>
#include <vector>

#include "pvrnn/io/checkpoint.hpp"
#include "pvrnn/io/run_config.hpp"
#include "pvrnn/observer/dataset.hpp"
#include "pvrnn/observer/observer_net.hpp"
#include "pvrnn/observer/pca.hpp"

namespace pvrnn {

struct ObserverRun {
  ObserverCheckpoint checkpoint;
  Mat confusion;  // on the noise-perturbed test set
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::vector<double> losses;
};

/// Trains the observer on clean prior generations of every trained primitive
/// and scores it on an independently perturbed copy (positional noise
/// `test_noise`).
inline ObserverRun train_observer_on_model(const ModelCheckpoint& model, const RunConfig& cfg) {
  if (model.labels.size() != 7) throw ConfigError("observer expects 7 primitive categories, model has " +
                                                  std::to_string(model.labels.size()));
  ObserverRun run;
  auto data_opt = cfg.observer.data;
  data_opt.warmup_steps = cfg.training.options.warmup_steps;
  data_opt.noise_sigma = 0.0;
  const auto train = observer_dataset(model.params, model.network, model.windows, data_opt);
  data_opt.noise_sigma = cfg.observer.test_noise;
  data_opt.seed = cfg.observer.data.seed + 1;
  const auto test = observer_dataset(model.params, model.network, model.windows, data_opt);

  auto sizes = cfg.observer_sizes();
  sizes.front() = 2 * kObserverBuffer;
  run.checkpoint.net = train_observer(train, sizes, cfg.observer.train, &run.losses);
  run.checkpoint.labels = model.labels;
  run.checkpoint.model_hash = hash_params(model.params);
  run.confusion = confusion_matrix(run.checkpoint.net, test);
  run.train_samples = train.size();
  run.test_samples = test.size();
  return run;
}

struct LatentTrace {
  std::string label;
  Mat states;  // steps x d^K units
};

/// Highest-layer d states of each primitive's prior generation.
inline std::vector<LatentTrace> top_layer_traces(const ModelCheckpoint& model, int steps, int warmup) {
  std::vector<LatentTrace> out;
  const int top = model.network.num_layers() - 1;
  for (std::size_t s = 0; s < model.windows.size(); ++s) {
    const auto r = seeded_prior_rollout(model.params, model.network, model.windows[s], steps, warmup);
    LatentTrace tr{model.labels[s], Mat(steps, model.network.layers[top].d_units)};
    for (int t = 0; t < steps; ++t) tr.states.row(t) = r.steps[t].layers[top].d.transpose();
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace pvrnn
