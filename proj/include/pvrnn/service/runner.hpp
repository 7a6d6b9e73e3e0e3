#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pvrnn/deliberation/session.hpp"
#include "pvrnn/io/checkpoint.hpp"
#include "pvrnn/io/run_config.hpp"
#include "pvrnn/io/session_log.hpp"
#include "pvrnn/observer/congruence.hpp"

namespace pvrnn {

/// Trained artifacts a session runs on.
struct SessionAssets {
  std::shared_ptr<const NetworkParams> params;
  ModelCheckpoint model;
  std::optional<ObserverCheckpoint> observer;
};

inline SessionAssets load_assets(const RunConfig& cfg, bool require_observer) {
  SessionAssets a;
  if (!std::filesystem::exists(cfg.paths.model)) throw ConfigError("model checkpoint not found: " + cfg.paths.model);
  a.model = load_model(cfg.paths.model);
  a.params = std::make_shared<const NetworkParams>(a.model.params);
  if (std::filesystem::exists(cfg.paths.observer))
    a.observer = load_observer(cfg.paths.observer);
  else if (require_observer)
    throw ConfigError("observer checkpoint not found: " + cfg.paths.observer);
  return a;
}

/// Builds a session on the trained model. The run config supplies the
/// deliberation and mixer settings; the network shape comes from the model.
inline Session make_session(const RunConfig& cfg, const SessionAssets& assets) {
  std::optional<StepAdaptation> seed_step;
  const auto& prim = cfg.session.start_primitive;
  if (!prim.empty()) {
    const auto it = std::find(assets.model.labels.begin(), assets.model.labels.end(), prim);
    if (it == assets.model.labels.end()) throw ConfigError("session.start_primitive not in model: " + prim);
    const auto& w = assets.model.windows[static_cast<std::size_t>(it - assets.model.labels.begin())];
    if (w.length() > 0) seed_step = w.steps.front();
  }
  return Session(assets.params, assets.model.network, cfg.deliberation, cfg.mixer, cfg.seed, seed_step);
}

/// Tick timing statistics of a paced run.
struct PacingStats {
  double duration_ms = 0.0;
  double p95_jitter_ms = 0.0;  // |interval - period| between consecutive tick starts
  double max_jitter_ms = 0.0;
  int budget_truncations = 0;
};

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Source of human input for tick t (1-based); nullopt when nothing arrived.
using InputSource = std::function<std::optional<HumanInput>(long t)>;
using TickSink = std::function<void(const TickRecord&)>;

inline InputSource trace_input(const std::vector<InputTraceRow>& trace) {
  auto rows = std::make_shared<std::vector<InputTraceRow>>(trace);
  return [rows](long t) -> std::optional<HumanInput> {
    auto it = std::lower_bound(rows->begin(), rows->end(), t, [](const InputTraceRow& r, long v) { return r.t < v; });
    if (it == rows->end() || it->t != t) return std::nullopt;
    return it->input;
  };
}

/// Real-time run: ticks start on an absolute grid (start + n * period), so
/// lateness never accumulates; inference is cut at the budget.
inline std::vector<TickRecord> run_paced(Session& session, int ticks, double period_ms, const InputSource& input,
                                         const TickSink& sink = {}, PacingStats* stats = nullptr,
                                         const std::function<bool()>& stop = {}) {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double, std::milli>(period_ms));
  const auto budget = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double, std::milli>(std::min(session.settings().budget_ms, period_ms)));
  std::vector<TickRecord> log;
  log.reserve(static_cast<std::size_t>(ticks));
  std::vector<double> starts;
  starts.reserve(static_cast<std::size_t>(ticks));
  int truncated = 0;
  const auto t0 = clock::now();
  for (int n = 0; n < ticks; ++n) {
    if (stop && stop()) break;
    std::this_thread::sleep_until(t0 + n * period);
    const auto start = clock::now();
    const double wall = std::chrono::duration<double, std::milli>(start - t0).count();
    starts.push_back(wall);
    TickTiming timing;
    timing.wall_time_ms = wall;
    timing.deadline = start + budget;
    TickRecord rec = session.tick(input ? input(n + 1) : std::nullopt, timing);
    if (session.window().full() && rec.inference_epochs_run < session.settings().epochs) ++truncated;
    if (sink) sink(rec);
    log.push_back(rec);
  }
  // the last tick occupies a full period
  std::this_thread::sleep_until(t0 + static_cast<long>(log.size()) * period);
  if (stats) {
    stats->duration_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    std::vector<double> jitter;
    for (std::size_t i = 1; i < starts.size(); ++i) jitter.push_back(std::abs(starts[i] - starts[i - 1] - period_ms));
    stats->p95_jitter_ms = percentile(jitter, 0.95);
    stats->max_jitter_ms = jitter.empty() ? 0.0 : *std::max_element(jitter.begin(), jitter.end());
    stats->budget_truncations = truncated;
  }
  return log;
}

/// Deterministic run on virtual time: wall_ms = (t - 1) * period and inference
/// is never cut by the clock. `epochs`, when given, fixes the epoch count per
/// tick (index t - 1), which reproduces a recorded real-time session.
inline std::vector<TickRecord> run_virtual(Session& session, int ticks, double period_ms, const InputSource& input,
                                           const std::vector<int>* epochs = nullptr, const TickSink& sink = {}) {
  std::vector<TickRecord> log;
  log.reserve(static_cast<std::size_t>(ticks));
  for (int n = 0; n < ticks; ++n) {
    TickTiming timing;
    timing.wall_time_ms = n * period_ms;
    if (epochs && static_cast<std::size_t>(n) < epochs->size()) timing.epochs = (*epochs)[n];
    TickRecord rec = session.tick(input ? input(n + 1) : std::nullopt, timing);
    if (sink) sink(rec);
    log.push_back(rec);
  }
  return log;
}

/// Per-session summary written next to the log.
inline nlohmann::json session_summary(const RunConfig& cfg, const SessionAssets& assets,
                                      const std::vector<TickRecord>& log, const PacingStats* pacing,
                                      const std::string& mode) {
  nlohmann::json j = {{"mode", mode},
                      {"ticks", log.size()},
                      {"seed", cfg.seed},
                      {"config_hash", std::to_string(config_hash(cfg))},
                      {"params_hash", std::to_string(hash_params(*assets.params))},
                      {"tick_ms", cfg.session.tick_ms}};
  if (pacing)
    j["pacing"] = {{"duration_ms", pacing->duration_ms},
                   {"p95_jitter_ms", pacing->p95_jitter_ms},
                   {"max_jitter_ms", pacing->max_jitter_ms},
                   {"budget_truncations", pacing->budget_truncations}};
  double nelbo_sum = 0.0;
  int resets = 0;
  for (const auto& r : log) {
    nelbo_sum += r.nelbo;
    resets += r.inference_reset ? 1 : 0;
  }
  j["mean_nelbo"] = log.empty() ? 0.0 : nelbo_sum / static_cast<double>(log.size());
  j["inference_resets"] = resets;

  std::vector<bool> active;
  for (const auto& r : log) active.push_back(r.human_active && r.human_intent.has_value());
  const auto ids = segment_events(active, cfg.observer.event_gap);
  int n_events = 0;
  for (int id : ids) n_events = std::max(n_events, id + 1);
  nlohmann::json events = nlohmann::json::array();
  std::vector<CongruenceRow> rows;
  if (assets.observer)
    rows = session_congruence(log, assets.observer->net, cfg.observer.congruence_window, cfg.observer.event_gap);
  for (int e = 0; e < n_events; ++e) {
    long first = 0, last = 0;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == e) {
        if (!first) first = log[i].t;
        last = log[i].t;
      }
    nlohmann::json ev = {{"event", e}, {"first_tick", first}, {"last_tick", last}};
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows)
      if (r.event == e) {
        sum += r.p;
        ++n;
      }
    ev["classified_ticks"] = n;
    ev["mean_congruence"] = n ? nlohmann::json(sum / n) : nlohmann::json(nullptr);
    events.push_back(ev);
  }
  j["events"] = events;
  return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << "\n";
}

/// Writes `<stem>.csv`, `<stem>.meta.json` and `<stem>.summary.json`.
inline void write_session_artifacts(const std::string& log_path, const RunConfig& cfg, const SessionAssets& assets,
                                    const std::vector<TickRecord>& log, const PacingStats* pacing,
                                    const std::string& mode) {
  namespace fs = std::filesystem;
  if (const auto dir = fs::path(log_path).parent_path(); !dir.empty()) fs::create_directories(dir);
  write_session_log(log_path, log);
  const auto stem = (fs::path(log_path).parent_path() / fs::path(log_path).stem()).string();
  write_json(stem + ".meta.json", {{"format_version", 1},
                                   {"mode", mode},
                                   {"seed", cfg.seed},
                                   {"config_hash", std::to_string(config_hash(cfg))},
                                   {"params_hash", std::to_string(hash_params(*assets.params))},
                                   {"config", to_json(cfg)}});
  write_json(stem + ".summary.json", session_summary(cfg, assets, log, pacing, mode));
}

}  // namespace pvrnn
