#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "pvrnn/core/encoding.hpp"
#include "pvrnn/deliberation/session.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/observer/observer_net.hpp"

namespace pvrnn {

/// Trailing mean of the last min(Y, t) congruence samples at each step.
inline std::vector<double> congruence(std::span<const int> c, int y = 10) {
  if (y < 1) throw ConfigError("congruence: Y must be >= 1");
  std::vector<double> p;
  p.reserve(c.size());
  double sum = 0.0;
  for (std::size_t t = 0; t < c.size(); ++t) {
    sum += c[t];
    if (t >= static_cast<std::size_t>(y)) sum -= c[t - y];
    p.push_back(sum / static_cast<double>(std::min<std::size_t>(t + 1, y)));
  }
  return p;
}

/// Groups active ticks into events: an event closes after `gap` consecutive
/// inactive ticks. Returns an event id per tick (-1 outside any event).
inline std::vector<int> segment_events(const std::vector<bool>& active, int gap = 10) {
  if (gap < 1) throw ConfigError("event gap must be >= 1");
  std::vector<int> id(active.size(), -1);
  int current = -1;
  int next_id = 0;
  std::optional<std::size_t> last_active;
  for (std::size_t t = 0; t < active.size(); ++t) {
    if (!active[t]) continue;
    if (current < 0 || !last_active || t - *last_active > static_cast<std::size_t>(gap)) current = next_id++;
    if (last_active && id[*last_active] == current)
      for (std::size_t u = *last_active + 1; u < t; ++u) id[u] = current;
    id[t] = current;
    last_active = t;
  }
  return id;
}

struct CongruenceRow {
  long t = 0;
  int event = 0;
  int human_label = 0;
  int robot_label = 0;
  int c = 0;
  double p = 0.0;
};

/// Per-tick observer state of a running session.
struct ObserverTick {
  std::optional<IntentLabel> robot;
  std::optional<IntentLabel> human;  // only when the human was active over the whole buffer
  std::optional<CongruenceRow> congruence;
};

/// Streams session ticks through the observer: labels the human and robot
/// intention buffers, sets c_t = 1 when they agree, and tracks P(C_t) within
/// the current human event. Events are split by `gap` inactive ticks.
class CongruenceTracker {
 public:
  CongruenceTracker(const ObserverNet& net, int y = 10, int gap = 10) : net_(&net), y_(y), gap_(gap) {
    if (y < 1) throw ConfigError("congruence: Y must be >= 1");
    if (gap < 1) throw ConfigError("event gap must be >= 1");
    buf_ = static_cast<std::size_t>(net.inputs() / 2);
  }

  ObserverTick push(const TickRecord& r) {
    ObserverTick out;
    robot_.push_back(r.robot_intent);
    const bool active = r.human_active && r.human_intent.has_value();
    human_.push_back(active ? *r.human_intent : Point2{});
    active_.push_back(active);
    if (robot_.size() > buf_) {
      robot_.erase(robot_.begin());
      human_.erase(human_.begin());
      active_.erase(active_.begin());
    }
    out.robot = classify(robot_, *net_);

    if (active) {
      if (event_ < 0 || r.t - last_active_ > gap_) {
        ++event_;
        c_.clear();
      }
      last_active_ = r.t;
    }
    const bool human_full = active_.size() == buf_ && std::all_of(active_.begin(), active_.end(), [](bool a) { return a; });
    if (!human_full) return out;
    out.human = classify(human_, *net_);

    CongruenceRow row;
    row.t = r.t;
    row.event = event_;
    row.human_label = out.human->index;
    row.robot_label = out.robot->index;
    row.c = row.human_label == row.robot_label ? 1 : 0;
    c_.push_back(row.c);
    const std::size_t n = std::min<std::size_t>(c_.size(), static_cast<std::size_t>(y_));
    int agree = 0;
    for (std::size_t i = c_.size() - n; i < c_.size(); ++i) agree += c_[i];
    row.p = static_cast<double>(agree) / static_cast<double>(n);
    out.congruence = row;
    return out;
  }

  int events() const { return event_ + 1; }

 private:
  const ObserverNet* net_;
  int y_;
  int gap_;
  std::size_t buf_;
  std::vector<Point2> robot_, human_;
  std::vector<bool> active_;
  std::vector<int> c_;
  int event_ = -1;
  long last_active_ = 0;
};

/// Offline congruence rows for a recorded session.
inline std::vector<CongruenceRow> session_congruence(std::span<const TickRecord> log, const ObserverNet& net,
                                                     int y = 10, int gap = 10) {
  CongruenceTracker tracker(net, y, gap);
  std::vector<CongruenceRow> rows;
  for (const auto& r : log)
    if (auto o = tracker.push(r); o.congruence) rows.push_back(*o.congruence);
  return rows;
}

}  // namespace pvrnn
