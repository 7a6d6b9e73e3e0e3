#pragma once

#include <span>
#include <vector>

#include "pvrnn/core/adaptation.hpp"
#include "pvrnn/core/forward.hpp"
#include "pvrnn/error.hpp"

namespace pvrnn {

/// Gradients of the loss -ELBO for one sequence.
struct BpttResult {
  NetworkParams params;    // d(-ELBO)/d theta, same layout as the network
  AdaptiveWindow adapt;    // d(-ELBO)/d a per step and layer
  ElboTerms terms;
};

enum class GradientScope { all, adaptation_only };

/// Back-propagation through time over a recorded posterior rollout.
///
/// Reverse sweep per step t (loss J = -ELBO):
///   dJ/do_t        = (1/n_x)(x_t - xbar_t)              per softmax channel
///   dJ/dh^k_t      = (1 - 1/tau) dJ/dh^k_{t+1} + dJ/dd^k_t (1 - d^2)
///   dJ/dz^k_t      = W_zh^T dJ/dh^k_t / tau
///   dJ/dmu^q       = dJ/dz + c (mu^q - mu^p)/sigma_p^2,          c = w^k / n_z
///   dJ/drho^q      = dJ/dz eps sigma_q + c (sigma_q^2/sigma_p^2 - 1)
///   dJ/dmu^p       = c (mu^p - mu^q)/sigma_p^2
///   dJ/drho^p      = c (1 - ((mu^q - mu^p)^2 + sigma_q^2)/sigma_p^2)
///   dJ/da_mu       = (1 - mu_q^2) dJ/dmu^q,  dJ/da_sigma = dJ/drho^q
/// and every head or recurrent map routes its share back into dJ/dd^k_{t-1}.
/// Connections to nonexistent neighbour layers contribute nothing.
inline BpttResult bptt_gradients(std::span<const SoftmaxFrame> targets, const Rollout& rollout,
                                 const NetworkParams& params, const NetworkConfig& cfg,
                                 GradientScope scope = GradientScope::all) {
  const int T = rollout.length();
  const int K = cfg.num_layers();
  if (static_cast<int>(targets.size()) != T)
    throw ConfigError("bptt_gradients: target length does not match rollout");
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      const auto& l = rollout.steps[t].layers[k];
      if (l.eps.size() != cfg.layers[k].z_units)
        throw ReplayError("bptt_gradients: missing epsilon record at step " + std::to_string(t));
      if (!l.has_posterior())
        throw ReplayError("bptt_gradients: step " + std::to_string(t) + " has no posterior record");
    }
  }

  const bool want_params = scope == GradientScope::all;
  BpttResult g;
  g.terms = elbo(targets, rollout, cfg);
  g.adapt = AdaptiveWindow::zeros(cfg, T);
  if (want_params) g.params = zero_params(cfg);

  const double inv_nx = 1.0 / cfg.dof;
  const double inv_nz = 1.0 / cfg.total_z();
  const int bins = cfg.softmax_bins;

  // dJ/dh^k carried from step t+1 (already multiplied by 1 - 1/tau) and
  // dJ/dd^k_t accumulated from step t+1 consumers.
  std::vector<Vec> carry_h(K), grad_d(K);
  for (int k = 0; k < K; ++k) {
    carry_h[k] = Vec::Zero(cfg.layers[k].d_units);
    grad_d[k] = Vec::Zero(cfg.layers[k].d_units);
  }

  for (int t = T - 1; t >= 0; --t) {
    const LatentState& cur = rollout.steps[t];
    const LatentState& prev = t > 0 ? rollout.steps[t - 1] : rollout.initial;

    // Output head.
    const auto& x = rollout.outputs[t];
    Vec go(cfg.output_size());
    for (int i = 0; i < cfg.dof; ++i) {
      const auto xbar = targets[t].channel(i);
      go.segment(i * bins, bins) = inv_nx * (x.channel(i) * xbar.sum() - xbar);
    }
    grad_d[0].noalias() += params.w_out.transpose() * go;
    if (want_params) {
      g.params.w_out.noalias() += go * cur.layers[0].d.transpose();
      g.params.b_out += go;
    }

    std::vector<Vec> next_grad_d(K);
    for (int k = 0; k < K; ++k) next_grad_d[k] = Vec::Zero(cfg.layers[k].d_units);

    for (int k = 0; k < K; ++k) {
      const auto& lp = params.layers[k];
      const auto& ls = cur.layers[k];
      const double inv_tau = 1.0 / cfg.layers[k].timescale;

      const Vec dh = carry_h[k] + grad_d[k].cwiseProduct((1.0 - ls.d.array().square()).matrix());
      carry_h[k] = (1.0 - inv_tau) * dh;
      const Vec s = inv_tau * dh;

      next_grad_d[k].noalias() += lp.w_rec.transpose() * s;
      if (k > 0) next_grad_d[k - 1].noalias() += lp.w_up.transpose() * s;
      if (k + 1 < K) next_grad_d[k + 1].noalias() += lp.w_down.transpose() * s;
      const Vec gz = lp.w_zh.transpose() * s;

      if (want_params) {
        auto& gp = g.params.layers[k];
        gp.w_rec.noalias() += s * prev.layers[k].d.transpose();
        if (k > 0) gp.w_up.noalias() += s * prev.layers[k - 1].d.transpose();
        if (k + 1 < K) gp.w_down.noalias() += s * prev.layers[k + 1].d.transpose();
        gp.w_zh.noalias() += s * ls.z.transpose();
        gp.b_h += s;
      }

      const auto& q = ls.posterior;
      const auto& p = ls.prior;
      const double c = cfg.w[k] * inv_nz;
      const Eigen::ArrayXd sp2 = p.sigma.array().square();
      const Eigen::ArrayXd sq2 = q.sigma.array().square();
      const Eigen::ArrayXd dmu = q.mu.array() - p.mu.array();
      auto inside = [](const Vec& rho) {
        return (rho.array() > -kRhoLimit && rho.array() < kRhoLimit).cast<double>();
      };

      const Eigen::ArrayXd g_mu_q = gz.array() + c * dmu / sp2;
      const Eigen::ArrayXd g_rho_q =
          (gz.array() * ls.eps.array() * q.sigma.array() + c * (sq2 / sp2 - 1.0)) * inside(q.rho);
      const Eigen::ArrayXd g_mu_p = -c * dmu / sp2;
      const Eigen::ArrayXd g_rho_p = c * (1.0 - (dmu.square() + sq2) / sp2) * inside(p.rho);

      const Vec g_u_q = (g_mu_q * (1.0 - q.mu.array().square())).matrix();
      const Vec g_u_p = (g_mu_p * (1.0 - p.mu.array().square())).matrix();
      const Vec g_rq = g_rho_q.matrix();
      const Vec g_rp = g_rho_p.matrix();

      g.adapt.steps[t].mu[k] = g_u_q;
      g.adapt.steps[t].sigma[k] = g_rq;

      const Vec& d_prev = prev.layers[k].d;
      next_grad_d[k].noalias() += lp.w_mu_q.transpose() * g_u_q;
      next_grad_d[k].noalias() += lp.w_sigma_q.transpose() * g_rq;
      next_grad_d[k].noalias() += lp.w_mu_p.transpose() * g_u_p;
      next_grad_d[k].noalias() += lp.w_sigma_p.transpose() * g_rp;

      if (want_params) {
        auto& gp = g.params.layers[k];
        gp.w_mu_q.noalias() += g_u_q * d_prev.transpose();
        gp.b_mu_q += g_u_q;
        gp.w_sigma_q.noalias() += g_rq * d_prev.transpose();
        gp.b_sigma_q += g_rq;
        gp.w_mu_p.noalias() += g_u_p * d_prev.transpose();
        gp.b_mu_p += g_u_p;
        gp.w_sigma_p.noalias() += g_rp * d_prev.transpose();
        gp.b_sigma_p += g_rp;
      }
    }
    grad_d = std::move(next_grad_d);
  }
  return g;
}

}  // namespace pvrnn
