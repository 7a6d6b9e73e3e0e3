#pragma once

#include <cstdint>
#include <deque>
#include <random>

#include "pvrnn/core/params.hpp"

namespace pvrnn {

enum class EpsMode { zeros, sampled };

/// Source of the standard-normal draws used by the reparameterization
/// z = mu + sigma * eps. Either all zeros, a seeded stream, or a queue of
/// injected vectors (tests).
class EpsilonSource {
 public:
  static EpsilonSource zeros() { return EpsilonSource(EpsMode::zeros, 0); }
  static EpsilonSource sampled(std::uint64_t seed) { return EpsilonSource(EpsMode::sampled, seed); }
  static EpsilonSource of(EpsMode mode, std::uint64_t seed) { return EpsilonSource(mode, seed); }

  /// Injected draws are consumed first, in order.
  void inject(Vec eps) { injected_.push_back(std::move(eps)); }

  Vec draw(int n) {
    if (!injected_.empty()) {
      Vec e = std::move(injected_.front());
      injected_.pop_front();
      if (e.size() != n) throw ConfigError("injected epsilon has wrong size");
      return e;
    }
    Vec e(n);
    if (mode_ == EpsMode::zeros) {
      e.setZero();
    } else {
      for (int i = 0; i < n; ++i) e[i] = normal_(rng_);
    }
    return e;
  }

  EpsMode mode() const { return mode_; }

 private:
  EpsilonSource(EpsMode mode, std::uint64_t seed) : mode_(mode), rng_(seed) {}

  EpsMode mode_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::deque<Vec> injected_;
};

}  // namespace pvrnn
