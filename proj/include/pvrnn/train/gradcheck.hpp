#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pvrnn/core/forward.hpp"
#include "pvrnn/train/bptt.hpp"

namespace pvrnn {

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::vector<GradCheckEntry> failures;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;  // over entries with |numeric| > atol

  bool passed() const { return failures.empty() && checked > 0; }
};

struct GradCheckOptions {
  double step = 1e-4;
  double rtol = 1e-4;
  double atol = 1e-6;
};

/// Compares bptt_gradients against central finite differences of -ELBO for
/// every network tensor entry and every adaptation entry. The epsilon draws of
/// `record` are replayed for each perturbed evaluation.
inline GradCheckReport gradient_check(std::span<const SoftmaxFrame> targets, const Rollout& record,
                                      NetworkParams params, AdaptiveWindow window,
                                      const NetworkConfig& cfg, const GradCheckOptions& opt = {}) {
  const BpttResult analytic = bptt_gradients(targets, replay_posterior(record, window, params, cfg),
                                             params, cfg);
  auto loss = [&]() {
    return elbo(targets, replay_posterior(record, window, params, cfg), cfg).nelbo();
  };

  GradCheckReport rep;
  auto check = [&](const std::string& name, double* value, std::size_t idx, double a) {
    const double saved = *value;
    *value = saved + opt.step;
    const double up = loss();
    *value = saved - opt.step;
    const double down = loss();
    *value = saved;
    const double n = (up - down) / (2.0 * opt.step);
    const double err = std::abs(a - n);
    ++rep.checked;
    rep.max_abs_error = std::max(rep.max_abs_error, err);
    if (std::abs(n) > opt.atol) rep.max_rel_error = std::max(rep.max_rel_error, err / std::abs(n));
    if (err > opt.atol + opt.rtol * std::abs(n)) rep.failures.push_back({name, idx, a, n});
  };

  std::vector<std::pair<std::string, std::span<double>>> p_named;
  visit_tensors(params, [&](const std::string& name, auto& t) {
    p_named.emplace_back(name, std::span<double>(t.data(), static_cast<std::size_t>(t.size())));
  });
  std::vector<std::span<const double>> g_spans = tensor_spans(analytic.params);
  for (std::size_t i = 0; i < p_named.size(); ++i)
    for (std::size_t j = 0; j < p_named[i].second.size(); ++j)
      check(p_named[i].first, &p_named[i].second[j], j, g_spans[i][j]);

  std::vector<std::pair<std::string, std::span<double>>> a_named;
  visit_adaptation(window, [&](const std::string& name, Vec& t) {
    a_named.emplace_back(name, std::span<double>(t.data(), static_cast<std::size_t>(t.size())));
  });
  AdaptiveWindow ga = analytic.adapt;
  auto ga_spans = tensor_spans(ga);
  for (std::size_t i = 0; i < a_named.size(); ++i)
    for (std::size_t j = 0; j < a_named[i].second.size(); ++j)
      check(a_named[i].first, &a_named[i].second[j], j, ga_spans[i][j]);
  return rep;
}

struct GradCheckProblem {
  NetworkConfig cfg;
  NetworkParams params;
  AdaptiveWindow window;
  std::vector<SoftmaxFrame> targets;
  Rollout record;
};

/// Random tiny problem: random weights and biases, random adaptation vectors,
/// random softmax targets, sampled epsilon.
inline GradCheckProblem random_gradcheck_problem(NetworkConfig cfg, int steps, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.8, 0.8);
  GradCheckProblem pr;
  pr.cfg = cfg;
  pr.params = init_params(cfg, seed);
  visit_tensors(pr.params, [&](const std::string& name, auto& t) {
    if (name.find(".b") != std::string::npos)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = uni(rng);
  });
  pr.window = AdaptiveWindow::zeros(cfg, steps);
  visit_adaptation(pr.window, [&](const std::string&, Vec& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = 0.5 * uni(rng);
  });
  for (int t = 0; t < steps; ++t) {
    Vec logits(cfg.output_size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits[i] = 3.0 * uni(rng);
    SoftmaxFrame f(cfg.dof, cfg.softmax_bins);
    for (int i = 0; i < cfg.dof; ++i)
      f.channel(i) = softmax(logits.segment(i * cfg.softmax_bins, cfg.softmax_bins));
    pr.targets.push_back(std::move(f));
  }
  auto eps = EpsilonSource::sampled(seed ^ 0x9e3779b97f4a7c15ULL);
  pr.record = posterior_rollout(initial_state(cfg), pr.window, pr.params, cfg, eps);
  return pr;
}

/// Two layers, d = 3/2, z = 1/1, tau = 2/4, 2 DOF x 3 bins.
inline NetworkConfig tiny_gradcheck_config() {
  NetworkConfig c;
  c.layers = {{3, 1, 2.0}, {2, 1, 4.0}};
  c.dof = 2;
  c.softmax_bins = 3;
  c.encoding_sigma = 0.5;
  c.w = {0.7, 1.3};
  c.seed = 7;
  return c;
}

}  // namespace pvrnn
