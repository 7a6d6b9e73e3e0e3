#pragma once

#include <algorithm>
#include <optional>

#include "pvrnn/core/encoding.hpp"
#include "pvrnn/error.hpp"

namespace pvrnn {

/// Shared-control mixing: gamma weights the human, rate_cap bounds the change
/// of each coordinate per tick.
struct MixerConfig {
  double gamma = 0.9;
  double rate_cap = 0.1;  // workspace units per tick

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("mixer gamma must be in [0, 1]");
    if (!(rate_cap > 0.0)) throw ConfigError("mixer rate_cap must be > 0");
  }
};

inline Point2 clamp_workspace(Point2 p) {
  return {std::clamp(p.x, -1.0, 1.0), std::clamp(p.y, -1.0, 1.0)};
}

/// target = gamma * human + (1 - gamma) * robot, or the robot intention alone
/// when the human is not engaged. Each coordinate of (target - prev) is
/// clamped to +-rate_cap; the result is clamped to the workspace. Without a
/// previous position the target is taken as is.
inline Point2 mix_control(std::optional<Point2> human, Point2 robot, std::optional<Point2> prev,
                          const MixerConfig& mixer) {
  Point2 target = robot;
  if (human) {
    target.x = mixer.gamma * human->x + (1.0 - mixer.gamma) * robot.x;
    target.y = mixer.gamma * human->y + (1.0 - mixer.gamma) * robot.y;
  }
  if (prev) {
    target.x = prev->x + std::clamp(target.x - prev->x, -mixer.rate_cap, mixer.rate_cap);
    target.y = prev->y + std::clamp(target.y - prev->y, -mixer.rate_cap, mixer.rate_cap);
  }
  return clamp_workspace(target);
}

}  // namespace pvrnn
