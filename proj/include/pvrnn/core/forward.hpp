#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pvrnn/core/adaptation.hpp"
#include "pvrnn/core/config.hpp"
#include "pvrnn/core/noise.hpp"
#include "pvrnn/core/params.hpp"
#include "pvrnn/core/state.hpp"
#include "pvrnn/error.hpp"

namespace pvrnn {

namespace detail {

inline void require_size(const Vec& v, Eigen::Index n, const char* what) {
  if (v.size() != n)
    throw ConfigError(std::string(what) + ": expected " + std::to_string(n) + " entries, got " +
                      std::to_string(v.size()));
}

inline GaussianStats gaussian_head(const Mat& w_mu, const Vec& b_mu, const Mat& w_sigma,
                                   const Vec& b_sigma, const Vec& d_prev, const Vec* a_mu,
                                   const Vec* a_sigma) {
  require_size(d_prev, w_mu.cols(), "d_prev");
  GaussianStats g;
  g.u = w_mu * d_prev + b_mu;
  if (a_mu) g.u += *a_mu;
  g.mu = g.u.array().tanh();
  g.rho = w_sigma * d_prev + b_sigma;
  if (a_sigma) g.rho += *a_sigma;
  g.rho = g.rho.cwiseMax(-kRhoLimit).cwiseMin(kRhoLimit);
  g.sigma = g.rho.array().exp();
  return g;
}

}  // namespace detail

/// Numerically stable softmax of one logit vector.
inline Vec softmax(const Eigen::Ref<const Vec>& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

/// Prior head of layer `p`: mu = tanh(W d + b), log sigma = W d + b.
inline GaussianStats prior_stats(const Vec& d_prev, const LayerParams& p) {
  return detail::gaussian_head(p.w_mu_p, p.b_mu_p, p.w_sigma_p, p.b_sigma_p, d_prev, nullptr,
                               nullptr);
}

/// Posterior head: the prior form plus the adaptation vectors of this step.
inline GaussianStats posterior_stats(const Vec& d_prev, const Vec& a_mu, const Vec& a_sigma,
                                     const LayerParams& p) {
  if (a_mu.size() != p.b_mu_q.size() || a_sigma.size() != p.b_sigma_q.size())
    throw WindowError("adaptation vector size does not match layer z units");
  return detail::gaussian_head(p.w_mu_q, p.b_mu_q, p.w_sigma_q, p.b_sigma_q, d_prev, &a_mu,
                               &a_sigma);
}

inline Vec sample_z(const GaussianStats& g, const Vec& eps) {
  detail::require_size(eps, g.mu.size(), "eps");
  return g.mu + g.sigma.cwiseProduct(eps);
}

/// Leaky-integrator update of every layer given the z of this step:
/// h_t = (1 - 1/tau) h_{t-1} + (1/tau)(W_rec d_{t-1} + W_up d^{k-1}_{t-1}
///       + W_down d^{k+1}_{t-1} + W_zh z_t + b), d_t = tanh(h_t).
/// Returns a state with h, d and z set; head statistics are left empty.
inline LatentState context_step(const LatentState& prev, std::span<const Vec> z,
                                const NetworkParams& params, const NetworkConfig& cfg) {
  const int K = cfg.num_layers();
  if (static_cast<int>(prev.layers.size()) != K || static_cast<int>(z.size()) != K)
    throw ConfigError("context_step: layer count mismatch");
  LatentState next;
  next.layers.resize(K);
  for (int k = 0; k < K; ++k) {
    const auto& lp = params.layers[k];
    const double inv_tau = 1.0 / cfg.layers[k].timescale;
    Vec drive = lp.w_rec * prev.layers[k].d + lp.w_zh * z[k] + lp.b_h;
    if (k > 0) drive.noalias() += lp.w_up * prev.layers[k - 1].d;
    if (k + 1 < K) drive.noalias() += lp.w_down * prev.layers[k + 1].d;
    auto& out = next.layers[k];
    out.h = (1.0 - inv_tau) * prev.layers[k].h + inv_tau * drive;
    out.d = out.h.array().tanh();
    out.z = z[k];
  }
  return next;
}

/// Output head reading layer-0 d units only; one softmax per DOF.
inline SoftmaxFrame decode_output(const Vec& d_low, const NetworkParams& params,
                                  const NetworkConfig& cfg) {
  detail::require_size(d_low, params.w_out.cols(), "d_low");
  const Vec o = params.w_out * d_low + params.b_out;
  SoftmaxFrame x(cfg.dof, cfg.softmax_bins);
  for (int i = 0; i < cfg.dof; ++i)
    x.channel(i) = softmax(o.segment(i * cfg.softmax_bins, cfg.softmax_bins));
  return x;
}

/// Per-unit KL[N(mu_q, sigma_q) || N(mu_p, sigma_p)].
inline Vec kl_gaussian(const Vec& mu_q, const Vec& sigma_q, const Vec& mu_p, const Vec& sigma_p) {
  if ((sigma_q.array() <= 0.0).any() || (sigma_p.array() <= 0.0).any())
    throw DomainError("kl_gaussian: sigma must be positive");
  const auto sq2 = sigma_q.array().square();
  const auto sp2 = sigma_p.array().square();
  return ((sigma_p.array() / sigma_q.array()).log() +
          ((mu_p.array() - mu_q.array()).square() + sq2) / (2.0 * sp2) - 0.5)
      .matrix();
}

/// Sum over channels of KL(reference || x) for two softmax frames.
inline double frame_kl(const SoftmaxFrame& reference, const SoftmaxFrame& x) {
  double acc = 0.0;
  const auto& r = reference.values();
  const auto& p = x.values();
  for (Eigen::Index j = 0; j < r.size(); ++j)
    if (r[j] > 0.0) acc += r[j] * (std::log(r[j]) - std::log(p[j]));
  return acc;
}

/// Network trajectory: the starting state plus one state and output per step.
struct Rollout {
  LatentState initial;
  std::vector<LatentState> steps;
  std::vector<SoftmaxFrame> outputs;

  int length() const { return static_cast<int>(steps.size()); }
  const LatentState& final_state() const { return steps.empty() ? initial : steps.back(); }
};

/// One closed-loop step with z drawn from the prior.
inline LatentState prior_step(const LatentState& prev, const NetworkParams& params,
                              const NetworkConfig& cfg, EpsilonSource& eps) {
  const int K = cfg.num_layers();
  std::vector<GaussianStats> stats(K);
  std::vector<Vec> z(K), e(K);
  for (int k = 0; k < K; ++k) {
    stats[k] = prior_stats(prev.layers[k].d, params.layers[k]);
    e[k] = eps.draw(cfg.layers[k].z_units);
    z[k] = sample_z(stats[k], e[k]);
  }
  LatentState next = context_step(prev, z, params, cfg);
  for (int k = 0; k < K; ++k) {
    next.layers[k].prior = std::move(stats[k]);
    next.layers[k].eps = std::move(e[k]);
  }
  return next;
}

/// One step with z drawn from the posterior; the prior statistics are kept
/// alongside for the KL term.
inline LatentState posterior_step(const LatentState& prev, const StepAdaptation& a,
                                  const NetworkParams& params, const NetworkConfig& cfg,
                                  EpsilonSource& eps) {
  const int K = cfg.num_layers();
  if (static_cast<int>(a.mu.size()) != K || static_cast<int>(a.sigma.size()) != K)
    throw WindowError("adaptation vectors missing for a layer");
  std::vector<GaussianStats> prior(K), post(K);
  std::vector<Vec> z(K), e(K);
  for (int k = 0; k < K; ++k) {
    prior[k] = prior_stats(prev.layers[k].d, params.layers[k]);
    post[k] = posterior_stats(prev.layers[k].d, a.mu[k], a.sigma[k], params.layers[k]);
    e[k] = eps.draw(cfg.layers[k].z_units);
    z[k] = sample_z(post[k], e[k]);
  }
  LatentState next = context_step(prev, z, params, cfg);
  for (int k = 0; k < K; ++k) {
    next.layers[k].prior = std::move(prior[k]);
    next.layers[k].posterior = std::move(post[k]);
    next.layers[k].eps = std::move(e[k]);
  }
  return next;
}

/// Posterior rollout over every step covered by `window`.
inline Rollout posterior_rollout(const LatentState& initial, const AdaptiveWindow& window,
                                 const NetworkParams& params, const NetworkConfig& cfg,
                                 EpsilonSource& eps) {
  Rollout r;
  r.initial = initial;
  r.steps.reserve(window.steps.size());
  r.outputs.reserve(window.steps.size());
  const LatentState* prev = &r.initial;
  for (const auto& a : window.steps) {
    r.steps.push_back(posterior_step(*prev, a, params, cfg, eps));
    r.outputs.push_back(decode_output(r.steps.back().layers[0].d, params, cfg));
    prev = &r.steps.back();
  }
  return r;
}

/// Re-runs a posterior rollout with the epsilon draws recorded in `record`.
inline Rollout replay_posterior(const Rollout& record, const AdaptiveWindow& window,
                                const NetworkParams& params, const NetworkConfig& cfg) {
  auto eps = EpsilonSource::zeros();
  for (const auto& s : record.steps)
    for (const auto& l : s.layers) eps.inject(l.eps);
  return posterior_rollout(record.initial, window, params, cfg, eps);
}

/// Closed-loop generation from the prior for `steps` steps.
inline Rollout generate_prior(const LatentState& initial, int steps, const NetworkParams& params,
                              const NetworkConfig& cfg, EpsilonSource& eps) {
  if (steps < 1) throw ConfigError("generate_prior: steps must be >= 1");
  Rollout r;
  r.initial = initial;
  r.steps.reserve(static_cast<std::size_t>(steps));
  r.outputs.reserve(static_cast<std::size_t>(steps));
  const LatentState* prev = &r.initial;
  for (int t = 0; t < steps; ++t) {
    r.steps.push_back(prior_step(*prev, params, cfg, eps));
    r.outputs.push_back(decode_output(r.steps.back().layers[0].d, params, cfg));
    prev = &r.steps.back();
  }
  return r;
}

inline Rollout generate_prior(const LatentState& initial, int steps, const NetworkParams& params,
                              const NetworkConfig& cfg, EpsMode mode) {
  auto eps = EpsilonSource::of(mode, cfg.seed);
  return generate_prior(initial, steps, params, cfg, eps);
}

struct ElboTerms {
  double elbo = 0.0;        // accuracy - regulation
  double accuracy = 0.0;    // sum_t (1/n_x) sum xbar log x
  double regulation = 0.0;  // sum_t sum_k (w^k / n_z) sum KL
  double kl_sum = 0.0;      // unweighted KL sum

  double nelbo() const { return -elbo; }
};

/// Single-sample ELBO of a posterior rollout against target frames.
inline ElboTerms elbo(std::span<const SoftmaxFrame> targets, const Rollout& rollout,
                      const NetworkConfig& cfg) {
  if (static_cast<int>(targets.size()) != rollout.length())
    throw ConfigError("elbo: target length " + std::to_string(targets.size()) +
                      " != rollout length " + std::to_string(rollout.length()));
  ElboTerms out;
  const double inv_nx = 1.0 / cfg.dof;
  const double inv_nz = 1.0 / cfg.total_z();
  for (int t = 0; t < rollout.length(); ++t) {
    const auto& xbar = targets[t].values();
    const auto& x = rollout.outputs[t].values();
    double ll = 0.0;
    for (Eigen::Index j = 0; j < xbar.size(); ++j)
      if (xbar[j] != 0.0) ll += xbar[j] * std::log(x[j]);
    out.accuracy += inv_nx * ll;
    for (int k = 0; k < cfg.num_layers(); ++k) {
      const auto& l = rollout.steps[t].layers[k];
      if (!l.has_posterior()) throw ConfigError("elbo: rollout was not generated by the posterior");
      const double kl = kl_gaussian(l.posterior.mu, l.posterior.sigma, l.prior.mu, l.prior.sigma).sum();
      out.kl_sum += kl;
      out.regulation += cfg.w[k] * inv_nz * kl;
    }
  }
  out.elbo = out.accuracy - out.regulation;
  return out;
}

}  // namespace pvrnn
