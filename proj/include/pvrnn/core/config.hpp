#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pvrnn/error.hpp"

namespace pvrnn {

struct LayerSpec {
  int d_units = 1;
  int z_units = 1;
  double timescale = 1.0;  // leaky-integrator time constant, >= 1
};

/// Architecture of a hierarchical PV-RNN. Layer 0 is the lowest (fastest)
/// layer and the only one read by the output head.
struct NetworkConfig {
  std::vector<LayerSpec> layers;
  int dof = 2;
  int softmax_bins = 10;
  double encoding_sigma = 0.1;
  std::vector<double> w;  // KL weight per layer
  std::uint64_t seed = 1;

  int num_layers() const { return static_cast<int>(layers.size()); }

  int total_z() const {
    return std::accumulate(layers.begin(), layers.end(), 0,
                           [](int acc, const LayerSpec& l) { return acc + l.z_units; });
  }

  int output_size() const { return dof * softmax_bins; }

  void validate() const {
    if (layers.empty()) throw ConfigError("network needs at least one layer");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      const std::string where = "layer " + std::to_string(k) + ": ";
      if (l.d_units < 1) throw ConfigError(where + "d_units must be >= 1");
      if (l.z_units < 1) throw ConfigError(where + "z_units must be >= 1");
      if (!(l.timescale >= 1.0)) throw ConfigError(where + "timescale must be >= 1");
      if (k > 0 && l.timescale < layers[k - 1].timescale)
        throw ConfigError(where + "timescales must be non-decreasing with layer index");
    }
    if (dof < 1) throw ConfigError("dof must be >= 1");
    if (softmax_bins < 2) throw ConfigError("softmax_bins must be >= 2");
    if (!(encoding_sigma > 0.0)) throw ConfigError("encoding_sigma must be > 0");
    if (w.size() != layers.size())
      throw ConfigError("w must hold one regulation weight per layer");
    for (double wk : w)
      if (!(wk >= 0.0)) throw ConfigError("regulation weight w must be >= 0");
  }
};

/// Demo architecture: Low 40d/4z/tau 2, High 10d/1z/tau 10, two planar DOF.
inline NetworkConfig demo_network_config() {
  NetworkConfig c;
  c.layers = {{40, 4, 2.0}, {10, 1, 10.0}};
  c.dof = 2;
  c.softmax_bins = 10;
  c.encoding_sigma = 0.1;
  c.w = {0.1, 0.1};
  c.seed = 1;
  return c;
}

}  // namespace pvrnn
