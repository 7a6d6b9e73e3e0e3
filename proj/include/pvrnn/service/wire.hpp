#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvrnn/deliberation/session.hpp"
#include "pvrnn/error.hpp"
#include "pvrnn/observer/congruence.hpp"

namespace pvrnn::wire {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class Kind { hello, input, state, event, error, bye };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::hello: return "hello";
    case Kind::input: return "input";
    case Kind::state: return "state";
    case Kind::event: return "event";
    case Kind::error: return "error";
    case Kind::bye: return "bye";
  }
  return "?";
}

inline std::optional<Kind> kind_from(const std::string& s) {
  for (Kind k : {Kind::hello, Kind::input, Kind::state, Kind::event, Kind::error, Kind::bye})
    if (s == kind_name(k)) return k;
  return std::nullopt;
}

/// Envelope shared by every message: {"kind", "session", "tick", "payload"}.
struct Message {
  Kind kind = Kind::event;
  std::string session;
  long tick = 0;
  json payload = json::object();
};

inline std::string encode(const Message& m) {
  json j = {{"kind", kind_name(m.kind)}, {"session", m.session}, {"tick", m.tick}, {"payload", m.payload}};
  return j.dump();
}

inline Message decode(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("message is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("message must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "kind" && key != "session" && key != "tick" && key != "payload")
      throw FormatError("unknown message field: " + key);
  Message m;
  if (!j.contains("kind") || !j["kind"].is_string()) throw FormatError("message.kind missing");
  const auto kind = kind_from(j["kind"].get<std::string>());
  if (!kind) throw FormatError("unknown message kind: " + j["kind"].get<std::string>());
  m.kind = *kind;
  if (j.contains("session")) {
    if (!j["session"].is_string()) throw FormatError("message.session must be a string");
    m.session = j["session"].get<std::string>();
  }
  if (j.contains("tick")) {
    if (!j["tick"].is_number_integer()) throw FormatError("message.tick must be an integer");
    m.tick = j["tick"].get<long>();
  }
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw FormatError("message.payload must be an object");
    m.payload = j["payload"];
  }
  return m;
}

struct InputPayload {
  HumanInput input;
  std::optional<long> seq;
};

/// input payload: {"x", "y", "active", "seq"?}, positions in [-1, 1].
inline InputPayload parse_input(const Message& m) {
  if (m.kind != Kind::input) throw FormatError("not an input message");
  const auto& p = m.payload;
  for (const auto& [key, _] : p.items())
    if (key != "x" && key != "y" && key != "active" && key != "seq") throw FormatError("unknown input field: " + key);
  if (!p.contains("x") || !p["x"].is_number() || !p.contains("y") || !p["y"].is_number())
    throw FormatError("input needs numeric x and y");
  if (!p.contains("active") || !p["active"].is_boolean()) throw FormatError("input needs boolean active");
  InputPayload out;
  out.input.pos = {p["x"].get<double>(), p["y"].get<double>()};
  out.input.active = p["active"].get<bool>();
  if (!(out.input.pos.x >= -1.0 && out.input.pos.x <= 1.0 && out.input.pos.y >= -1.0 && out.input.pos.y <= 1.0))
    throw FormatError("input position outside [-1, 1]");
  if (p.contains("seq")) {
    if (!p["seq"].is_number_integer()) throw FormatError("input.seq must be an integer");
    out.seq = p["seq"].get<long>();
  }
  return out;
}

inline json point(Point2 p) { return json::array({p.x, p.y}); }

inline json label_json(const std::optional<IntentLabel>& l, const std::vector<std::string>& names) {
  if (!l) return nullptr;
  json conf = json::array();
  for (Eigen::Index i = 0; i < l->confidence.size(); ++i) conf.push_back(l->confidence[i]);
  const auto name = l->index < static_cast<int>(names.size()) ? names[l->index] : std::to_string(l->index);
  return {{"index", l->index}, {"name", name}, {"confidence", conf}};
}

struct HelloInfo {
  std::string phase = "running";
  int ticks = 2000;
  double tick_ms = 100.0;
  double gamma = 0.9;
  double rate_cap = 0.1;
  int window = 15;
  std::uint64_t seed = 1;
  std::string config_hash;
  std::vector<std::string> labels;
  std::vector<std::pair<std::string, std::vector<Point2>>> watermark;
};

inline Message hello(const std::string& session, const HelloInfo& h) {
  json wm = json::array();
  for (const auto& [label, pts] : h.watermark) {
    json poly = json::array();
    for (const auto& p : pts) poly.push_back(point(p));
    wm.push_back({{"label", label}, {"points", poly}});
  }
  return {Kind::hello,
          session,
          0,
          {{"schema", kSchemaVersion},
           {"phase", h.phase},
           {"ticks", h.ticks},
           {"tick_ms", h.tick_ms},
           {"gamma", h.gamma},
           {"rate_cap", h.rate_cap},
           {"window", h.window},
           {"seed", h.seed},
           {"config_hash", h.config_hash},
           {"labels", h.labels},
           {"watermark", wm}}};
}

inline Message state(const std::string& session, const TickRecord& r, const ObserverTick* obs,
                     const std::vector<std::string>& labels, std::optional<long> input_seq) {
  json p = {{"t", r.t},
            {"robot", point(r.robot_intent)},
            {"human", r.human_intent ? point(*r.human_intent) : json(nullptr)},
            {"human_active", r.human_active},
            {"mixed", point(r.mixed)},
            {"nelbo", r.nelbo},
            {"epochs", r.inference_epochs_run},
            {"wall_ms", r.wall_time_ms},
            {"input_seq", input_seq ? json(*input_seq) : json(nullptr)}};
  if (obs) {
    p["robot_label"] = label_json(obs->robot, labels);
    p["human_label"] = label_json(obs->human, labels);
    if (obs->congruence) {
      p["c"] = obs->congruence->c;
      p["p"] = obs->congruence->p;
      p["event"] = obs->congruence->event;
    } else {
      p["c"] = nullptr;
      p["p"] = nullptr;
      p["event"] = nullptr;
    }
  }
  return {Kind::state, session, r.t, p};
}

inline Message event(const std::string& session, long tick, const std::string& code, json detail = json::object()) {
  return {Kind::event, session, tick, {{"code", code}, {"detail", std::move(detail)}}};
}

inline Message error(const std::string& session, long tick, const std::string& text) {
  return {Kind::error, session, tick, {{"message", text}}};
}

inline Message bye(const std::string& session, long tick, const std::string& reason) {
  return {Kind::bye, session, tick, {{"reason", reason}}};
}

}  // namespace pvrnn::wire
