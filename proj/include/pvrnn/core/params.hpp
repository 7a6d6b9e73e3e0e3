#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pvrnn/core/config.hpp"

namespace pvrnn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Trainable tensors of one layer. `w_up` reads the layer below and `w_down`
/// the layer above; both are 0-sized where that neighbour does not exist.
struct LayerParams {
  Mat w_rec;   // d^k_{t-1} -> h^k
  Mat w_up;    // d^{k-1}_{t-1} -> h^k
  Mat w_down;  // d^{k+1}_{t-1} -> h^k
  Mat w_zh;    // z^k_t -> h^k
  Vec b_h;

  Mat w_mu_p;
  Vec b_mu_p;
  Mat w_sigma_p;
  Vec b_sigma_p;

  Mat w_mu_q;
  Vec b_mu_q;
  Mat w_sigma_q;
  Vec b_sigma_q;
};

struct NetworkParams {
  std::vector<LayerParams> layers;
  Mat w_out;  // (dof * bins) x d^0
  Vec b_out;
};

/// Calls `fn(name, tensor)` for every tensor in a fixed order. Works for const
/// and mutable params; the order defines checkpoint and optimizer layout.
template <class Params, class Fn>
void visit_tensors(Params& params, Fn&& fn) {
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& l = params.layers[k];
    const std::string p = "layer" + std::to_string(k) + ".";
    fn(p + "w_rec", l.w_rec);
    fn(p + "w_up", l.w_up);
    fn(p + "w_down", l.w_down);
    fn(p + "w_zh", l.w_zh);
    fn(p + "b_h", l.b_h);
    fn(p + "w_mu_p", l.w_mu_p);
    fn(p + "b_mu_p", l.b_mu_p);
    fn(p + "w_sigma_p", l.w_sigma_p);
    fn(p + "b_sigma_p", l.b_sigma_p);
    fn(p + "w_mu_q", l.w_mu_q);
    fn(p + "b_mu_q", l.b_mu_q);
    fn(p + "w_sigma_q", l.w_sigma_q);
    fn(p + "b_sigma_q", l.b_sigma_q);
  }
  fn(std::string("out.w"), params.w_out);
  fn(std::string("out.b"), params.b_out);
}

/// Flat views over every tensor, in visit order.
inline std::vector<std::span<double>> tensor_spans(NetworkParams& params) {
  std::vector<std::span<double>> out;
  visit_tensors(params, [&](const std::string&, auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

inline std::vector<std::span<const double>> tensor_spans(const NetworkParams& params) {
  std::vector<std::span<const double>> out;
  visit_tensors(params, [&](const std::string&, const auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

/// All tensors zero, shaped for `cfg`.
inline NetworkParams zero_params(const NetworkConfig& cfg) {
  cfg.validate();
  NetworkParams p;
  const int K = cfg.num_layers();
  p.layers.resize(K);
  for (int k = 0; k < K; ++k) {
    const int d = cfg.layers[k].d_units;
    const int z = cfg.layers[k].z_units;
    auto& l = p.layers[k];
    l.w_rec = Mat::Zero(d, d);
    l.w_up = k > 0 ? Mat::Zero(d, cfg.layers[k - 1].d_units) : Mat(d, 0);
    l.w_down = k + 1 < K ? Mat::Zero(d, cfg.layers[k + 1].d_units) : Mat(d, 0);
    l.w_zh = Mat::Zero(d, z);
    l.b_h = Vec::Zero(d);
    l.w_mu_p = Mat::Zero(z, d);
    l.b_mu_p = Vec::Zero(z);
    l.w_sigma_p = Mat::Zero(z, d);
    l.b_sigma_p = Vec::Zero(z);
    l.w_mu_q = Mat::Zero(z, d);
    l.b_mu_q = Vec::Zero(z);
    l.w_sigma_q = Mat::Zero(z, d);
    l.b_sigma_q = Vec::Zero(z);
  }
  p.w_out = Mat::Zero(cfg.output_size(), cfg.layers[0].d_units);
  p.b_out = Vec::Zero(cfg.output_size());
  return p;
}

/// Weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
inline NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  NetworkParams p = zero_params(cfg);
  std::mt19937_64 rng(seed);
  auto fill = [&](Mat& m) {
    if (m.size() == 0) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  for (auto& l : p.layers) {
    fill(l.w_rec);
    fill(l.w_up);
    fill(l.w_down);
    fill(l.w_zh);
    fill(l.w_mu_p);
    fill(l.w_sigma_p);
    fill(l.w_mu_q);
    fill(l.w_sigma_q);
  }
  fill(p.w_out);
  return p;
}

inline void set_zero(NetworkParams& p) {
  visit_tensors(p, [](const std::string&, auto& t) { t.setZero(); });
}

inline bool all_finite(const NetworkParams& p) {
  bool ok = true;
  visit_tensors(p, [&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

inline std::size_t parameter_count(const NetworkParams& p) {
  std::size_t n = 0;
  visit_tensors(p, [&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

}  // namespace pvrnn
