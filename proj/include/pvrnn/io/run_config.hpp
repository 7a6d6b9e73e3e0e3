#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvrnn/core/config.hpp"
#include "pvrnn/deliberation/mixer.hpp"
#include "pvrnn/deliberation/window.hpp"
#include "pvrnn/io/hash.hpp"
#include "pvrnn/observer/dataset.hpp"
#include "pvrnn/observer/observer_net.hpp"
#include "pvrnn/train/trainer.hpp"

namespace pvrnn {

struct TrainingConfig {
  int epochs = 5000;
  int report_every = 100;
  TrainingOptions options;
};

struct SessionConfig {
  double tick_ms = 100.0;
  int ticks = 2000;
  std::string start_primitive = "Head";  // empty: start from the zero state
};

struct ObserverConfig {
  std::vector<int> hidden = {150, 100};
  ObserverTrainOptions train;
  ObserverDataOptions data;
  double test_noise = 0.02;
  int congruence_window = 10;
  int event_gap = 10;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8765;
  int max_sessions = 1;
};

struct PathsConfig {
  std::string primitives = "data/primitives";
  std::string model = "runs/model.ckpt";
  std::string observer = "runs/observer.ckpt";
  std::string log_dir = "runs/sessions";
};

/// Everything a CLI command needs. The top-level seed feeds every stream
/// (network init and sampling, session epsilon, observer init and shuffling).
struct RunConfig {
  std::uint64_t seed = 1;
  NetworkConfig network = demo_network_config();
  TrainingConfig training;
  MixerConfig mixer;
  DeliberationSettings deliberation;
  SessionConfig session;
  ObserverConfig observer;
  ServiceConfig service;
  PathsConfig paths;

  /// Copies the top-level seed into the sub-configs that carry their own.
  void propagate_seed() {
    network.seed = seed;
    observer.train.seed = seed;
    observer.data.seed = seed;
  }

  void validate() const {
    network.validate();
    mixer.validate();
    deliberation.validate();
    if (training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (training.report_every < 1) throw ConfigError("training.report_every must be >= 1");
    if (training.options.warmup_steps < 0) throw ConfigError("training.warmup_steps must be >= 0");
    const auto& a = training.options.adam;
    if (!(a.alpha > 0.0) || !(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0) ||
        !(a.epsilon > 0.0))
      throw ConfigError("training: invalid Adam settings");
    if (!(session.tick_ms > 0.0)) throw ConfigError("session.tick_ms must be > 0");
    if (session.ticks < 1) throw ConfigError("session.ticks must be >= 1");
    for (int h : observer.hidden)
      if (h < 1) throw ConfigError("observer.hidden sizes must be >= 1");
    if (observer.train.epochs < 1 || observer.train.batch_size < 1)
      throw ConfigError("observer.epochs and observer.batch_size must be >= 1");
    if (observer.data.steps < 1 || observer.data.discard < 0 || observer.data.discard >= observer.data.steps)
      throw ConfigError("observer: need 0 <= discard < steps");
    if (observer.data.steps - observer.data.discard < kObserverBuffer)
      throw ConfigError("observer: steps - discard must cover one buffer");
    if (observer.data.reseed_every < 0) throw ConfigError("observer.reseed_every must be >= 0");
    if (!(observer.test_noise >= 0.0)) throw ConfigError("observer.test_noise must be >= 0");
    if (observer.congruence_window < 1) throw ConfigError("observer.congruence_window must be >= 1");
    if (observer.event_gap < 1) throw ConfigError("observer.event_gap must be >= 1");
    if (service.port < 0 || service.port > 65535) throw ConfigError("service.port out of range");
    if (service.max_sessions < 1) throw ConfigError("service.max_sessions must be >= 1");
  }

  std::vector<int> observer_sizes() const {
    std::vector<int> s = {network.dof * kObserverBuffer};
    s.insert(s.end(), observer.hidden.begin(), observer.hidden.end());
    s.push_back(7);
    return s;
  }
};

namespace detail {

using nlohmann::json;

inline const char* eps_name(EpsMode m) { return m == EpsMode::zeros ? "zeros" : "sampled"; }

inline EpsMode eps_from(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + ": expected a string");
  const auto s = j.get<std::string>();
  if (s == "zeros") return EpsMode::zeros;
  if (s == "sampled") return EpsMode::sampled;
  throw ConfigError(key + ": expected \"zeros\" or \"sampled\", got \"" + s + "\"");
}

inline void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError((section.empty() ? "config" : section) + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError("unknown config key: " + (section.empty() ? key : section + "." + key));
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + section + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json network_to_json(const NetworkConfig& n) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& l : n.layers)
    layers.push_back({{"d_units", l.d_units}, {"z_units", l.z_units}, {"timescale", l.timescale}});
  return {{"layers", layers},
          {"dof", n.dof},
          {"softmax_bins", n.softmax_bins},
          {"encoding_sigma", n.encoding_sigma},
          {"w", n.w}};
}

/// Overlays the keys present in `j` onto `out`.
inline void read_network(const nlohmann::json& j, NetworkConfig& out) {
  using detail::read;
  detail::check_keys(j, "network", {"layers", "dof", "softmax_bins", "encoding_sigma", "w"});
  if (j.contains("layers")) {
    if (!j["layers"].is_array()) throw ConfigError("network.layers must be an array");
    out.layers.clear();
    for (const auto& l : j["layers"]) {
      detail::check_keys(l, "network.layers[]", {"d_units", "z_units", "timescale"});
      LayerSpec s;
      read(l, "d_units", s.d_units, "network.layers[]");
      read(l, "z_units", s.z_units, "network.layers[]");
      read(l, "timescale", s.timescale, "network.layers[]");
      out.layers.push_back(s);
    }
    if (!j.contains("w")) out.w.assign(out.layers.size(), 0.1);
  }
  read(j, "dof", out.dof, "network");
  read(j, "softmax_bins", out.softmax_bins, "network");
  read(j, "encoding_sigma", out.encoding_sigma, "network");
  read(j, "w", out.w, "network");
}

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& o = c.training.options;
  return {
      {"seed", c.seed},
      {"network", network_to_json(c.network)},
      {"training",
       {{"epochs", c.training.epochs},
        {"report_every", c.training.report_every},
        {"alpha", o.adam.alpha},
        {"beta1", o.adam.beta1},
        {"beta2", o.adam.beta2},
        {"epsilon", o.adam.epsilon},
        {"clip_norm", o.clip_norm},
        {"warmup_steps", o.warmup_steps}}},
      {"mixer", {{"gamma", c.mixer.gamma}, {"rate_cap", c.mixer.rate_cap}}},
      {"deliberation",
       {{"window", c.deliberation.window},
        {"epochs", c.deliberation.epochs},
        {"rate", c.deliberation.rate},
        {"max_backtracks", c.deliberation.max_backtracks},
        {"budget_ms", c.deliberation.budget_ms},
        {"inference_eps", detail::eps_name(c.deliberation.inference_eps)},
        {"generation_eps", detail::eps_name(c.deliberation.generation_eps)}}},
      {"session",
       {{"tick_ms", c.session.tick_ms}, {"ticks", c.session.ticks}, {"start_primitive", c.session.start_primitive}}},
      {"observer",
       {{"hidden", c.observer.hidden},
        {"epochs", c.observer.train.epochs},
        {"batch_size", c.observer.train.batch_size},
        {"alpha", c.observer.train.adam.alpha},
        {"steps", c.observer.data.steps},
        {"discard", c.observer.data.discard},
        {"reseed_every", c.observer.data.reseed_every},
        {"test_noise", c.observer.test_noise},
        {"congruence_window", c.observer.congruence_window},
        {"event_gap", c.observer.event_gap}}},
      {"service",
       {{"host", c.service.host}, {"port", c.service.port}, {"max_sessions", c.service.max_sessions}}},
      {"paths",
       {{"primitives", c.paths.primitives},
        {"model", c.paths.model},
        {"observer", c.paths.observer},
        {"log_dir", c.paths.log_dir}}},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  check_keys(j, "", {"seed", "network", "training", "mixer", "deliberation", "session", "observer", "service", "paths"});
  read(j, "seed", c.seed, "");

  if (j.contains("network")) read_network(j["network"], c.network);
  if (j.contains("training")) {
    const auto& t = j["training"];
    check_keys(t, "training",
               {"epochs", "report_every", "alpha", "beta1", "beta2", "epsilon", "clip_norm", "warmup_steps"});
    auto& o = c.training.options;
    read(t, "epochs", c.training.epochs, "training");
    read(t, "report_every", c.training.report_every, "training");
    read(t, "alpha", o.adam.alpha, "training");
    read(t, "beta1", o.adam.beta1, "training");
    read(t, "beta2", o.adam.beta2, "training");
    read(t, "epsilon", o.adam.epsilon, "training");
    read(t, "clip_norm", o.clip_norm, "training");
    read(t, "warmup_steps", o.warmup_steps, "training");
  }
  if (j.contains("mixer")) {
    const auto& m = j["mixer"];
    check_keys(m, "mixer", {"gamma", "rate_cap"});
    read(m, "gamma", c.mixer.gamma, "mixer");
    read(m, "rate_cap", c.mixer.rate_cap, "mixer");
  }
  if (j.contains("deliberation")) {
    const auto& d = j["deliberation"];
    check_keys(d, "deliberation", {"window", "epochs", "rate", "max_backtracks", "budget_ms", "inference_eps",
                                     "generation_eps"});
    read(d, "window", c.deliberation.window, "deliberation");
    read(d, "epochs", c.deliberation.epochs, "deliberation");
    read(d, "rate", c.deliberation.rate, "deliberation");
    read(d, "max_backtracks", c.deliberation.max_backtracks, "deliberation");
    read(d, "budget_ms", c.deliberation.budget_ms, "deliberation");
    if (d.contains("inference_eps"))
      c.deliberation.inference_eps = detail::eps_from(d["inference_eps"], "deliberation.inference_eps");
    if (d.contains("generation_eps"))
      c.deliberation.generation_eps = detail::eps_from(d["generation_eps"], "deliberation.generation_eps");
  }
  if (j.contains("session")) {
    const auto& s = j["session"];
    check_keys(s, "session", {"tick_ms", "ticks", "start_primitive"});
    read(s, "tick_ms", c.session.tick_ms, "session");
    read(s, "ticks", c.session.ticks, "session");
    read(s, "start_primitive", c.session.start_primitive, "session");
  }
  if (j.contains("observer")) {
    const auto& o = j["observer"];
    check_keys(o, "observer",
               {"hidden", "epochs", "batch_size", "alpha", "steps", "discard", "reseed_every", "test_noise",
                "congruence_window", "event_gap"});
    read(o, "hidden", c.observer.hidden, "observer");
    read(o, "epochs", c.observer.train.epochs, "observer");
    read(o, "batch_size", c.observer.train.batch_size, "observer");
    read(o, "alpha", c.observer.train.adam.alpha, "observer");
    read(o, "steps", c.observer.data.steps, "observer");
    read(o, "discard", c.observer.data.discard, "observer");
    read(o, "reseed_every", c.observer.data.reseed_every, "observer");
    read(o, "test_noise", c.observer.test_noise, "observer");
    read(o, "congruence_window", c.observer.congruence_window, "observer");
    read(o, "event_gap", c.observer.event_gap, "observer");
  }
  if (j.contains("service")) {
    const auto& s = j["service"];
    check_keys(s, "service", {"host", "port", "max_sessions"});
    read(s, "host", c.service.host, "service");
    read(s, "port", c.service.port, "service");
    read(s, "max_sessions", c.service.max_sessions, "service");
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, "paths", {"primitives", "model", "observer", "log_dir"});
    read(p, "primitives", c.paths.primitives, "paths");
    read(p, "model", c.paths.model, "paths");
    read(p, "observer", c.paths.observer, "paths");
    read(p, "log_dir", c.paths.log_dir, "paths");
  }
  c.propagate_seed();
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write config " + path);
  out << dump_config(c);
}

/// Hash of the canonical (compact, key-sorted) form.
inline std::uint64_t config_hash(const RunConfig& c) { return hash_text(to_json(c).dump()); }

/// Hash of the parts that shape a trained model's tensors and training stream.
inline std::uint64_t network_hash(const NetworkConfig& n) {
  return hash_text(network_to_json(n).dump() + "#" + std::to_string(n.seed));
}

}  // namespace pvrnn
