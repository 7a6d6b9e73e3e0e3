#pragma once

#include <Eigen/Dense>
#include <vector>

#include "pvrnn/core/config.hpp"
#include "pvrnn/core/params.hpp"

namespace pvrnn {

/// Gaussian head output for one layer at one step.
struct GaussianStats {
  Vec u;      // pre-activation of the mean
  Vec mu;     // tanh(u)
  Vec rho;    // log sigma, clamped to [-kRhoLimit, kRhoLimit]
  Vec sigma;  // exp(rho)
};

/// log sigma is clamped to this magnitude before exponentiation.
inline constexpr double kRhoLimit = 7.0;

struct LayerState {
  Vec h;  // internal state
  Vec d;  // tanh(h)
  GaussianStats prior;
  GaussianStats posterior;  // empty when z came from the prior
  Vec z;
  Vec eps;  // standard-normal draw that produced z

  bool has_posterior() const { return posterior.mu.size() > 0; }
  const GaussianStats& source() const { return has_posterior() ? posterior : prior; }
};

/// Network state at one time step, all layers.
struct LatentState {
  std::vector<LayerState> layers;
};

/// h = 0 (so d = 0) in every layer; no z yet.
inline LatentState initial_state(const NetworkConfig& cfg) {
  LatentState s;
  s.layers.resize(cfg.layers.size());
  for (std::size_t k = 0; k < cfg.layers.size(); ++k) {
    s.layers[k].h = Vec::Zero(cfg.layers[k].d_units);
    s.layers[k].d = Vec::Zero(cfg.layers[k].d_units);
  }
  return s;
}

/// One probability vector per degree of freedom, stored contiguously.
class SoftmaxFrame {
 public:
  SoftmaxFrame() = default;
  SoftmaxFrame(int dof, int bins) : dof_(dof), bins_(bins), p_(Vec::Zero(dof * bins)) {}
  SoftmaxFrame(int dof, int bins, Vec p) : dof_(dof), bins_(bins), p_(std::move(p)) {}

  int dof() const { return dof_; }
  int bins() const { return bins_; }

  auto channel(int i) { return p_.segment(i * bins_, bins_); }
  auto channel(int i) const { return p_.segment(i * bins_, bins_); }

  const Vec& values() const { return p_; }
  Vec& values() { return p_; }

  bool is_valid(double tol = 1e-9) const {
    for (int i = 0; i < dof_; ++i) {
      const auto c = channel(i);
      if ((c.array() < 0.0).any() || !c.allFinite()) return false;
      if (std::abs(c.sum() - 1.0) > tol) return false;
    }
    return true;
  }

 private:
  int dof_ = 0;
  int bins_ = 0;
  Vec p_;
};

}  // namespace pvrnn
