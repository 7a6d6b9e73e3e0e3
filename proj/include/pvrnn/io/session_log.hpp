#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pvrnn/deliberation/session.hpp"
#include "pvrnn/io/csv.hpp"
#include "pvrnn/train/trainer.hpp"

namespace pvrnn {

inline const std::vector<std::string>& session_log_header() {
  static const std::vector<std::string> h = {"t",       "human_x", "human_y", "human_active", "robot_x", "robot_y",
                                             "mixed_x", "mixed_y", "nelbo",   "epochs",       "wall_ms"};
  return h;
}

inline std::vector<std::string> session_log_row(const TickRecord& r) {
  using csv::format_double;
  return {std::to_string(r.t),
          r.human_intent ? format_double(r.human_intent->x) : "",
          r.human_intent ? format_double(r.human_intent->y) : "",
          r.human_active ? "1" : "0",
          format_double(r.robot_intent.x),
          format_double(r.robot_intent.y),
          format_double(r.mixed.x),
          format_double(r.mixed.y),
          format_double(r.nelbo),
          std::to_string(r.inference_epochs_run),
          format_double(r.wall_time_ms)};
}

/// Append-only per-session CSV writer.
class SessionLogWriter {
 public:
  explicit SessionLogWriter(const std::string& path) : out_(path) { out_.row(session_log_header()); }
  void append(const TickRecord& r) { out_.row(session_log_row(r)); }
  void flush() { out_.flush(); }
  const std::string& path() const { return out_.path(); }

 private:
  csv::Writer out_;
};

inline void write_session_log(const std::string& path, const std::vector<TickRecord>& log) {
  SessionLogWriter w(path);
  for (const auto& r : log) w.append(r);
}

namespace detail {

inline std::map<std::string, std::size_t> column_index(const csv::Table& t) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < t.header.size(); ++i) idx[std::string(csv::trim(t.header[i]))] = i;
  return idx;
}

inline double need_double(const std::string& field, const std::string& where) {
  double v = 0.0;
  if (!csv::parse_double(field, v)) throw FormatError(where + ": not a number: '" + field + "'");
  return v;
}

inline long need_int(const std::string& field, const std::string& where) {
  long long v = 0;
  if (!csv::parse_int(field, v)) throw FormatError(where + ": not an integer: '" + field + "'");
  return static_cast<long>(v);
}

inline bool need_flag(const std::string& field, const std::string& where) {
  const auto f = csv::trim(field);
  if (f == "1" || f == "true") return true;
  if (f == "0" || f == "false") return false;
  throw FormatError(where + ": expected 0/1, got '" + field + "'");
}

}  // namespace detail

inline std::vector<TickRecord> read_session_log(const std::string& path) {
  const auto t = csv::read_table(path);
  if (t.header != session_log_header()) throw FormatError(path + ": not a session log (header mismatch)");
  std::vector<TickRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const auto where = path + ":" + std::to_string(t.line_numbers[i]);
    TickRecord r;
    r.t = detail::need_int(f[0], where);
    if (!csv::trim(f[1]).empty() || !csv::trim(f[2]).empty())
      r.human_intent = Point2{detail::need_double(f[1], where), detail::need_double(f[2], where)};
    r.human_active = detail::need_flag(f[3], where);
    r.robot_intent = {detail::need_double(f[4], where), detail::need_double(f[5], where)};
    r.mixed = {detail::need_double(f[6], where), detail::need_double(f[7], where)};
    r.nelbo = detail::need_double(f[8], where);
    r.inference_epochs_run = static_cast<int>(detail::need_int(f[9], where));
    r.wall_time_ms = detail::need_double(f[10], where);
    out.push_back(r);
  }
  return out;
}

/// One human sample per tick; `input` absent means no message arrived.
struct InputTraceRow {
  long t = 0;
  std::optional<HumanInput> input;
};

/// Reads `t,x,y,active` traces. A session log is accepted as well, in which
/// case its human columns are replayed. Rows must be ordered by t; ticks
/// without a row get no input.
inline std::vector<InputTraceRow> read_input_trace(const std::string& path) {
  const auto t = csv::read_table(path);
  auto idx = detail::column_index(t);
  std::size_t cx, cy, ca;
  if (t.header == session_log_header()) {
    cx = idx["human_x"], cy = idx["human_y"], ca = idx["human_active"];
  } else if (idx.count("t") && idx.count("x") && idx.count("y") && idx.count("active") && t.header.size() == 4) {
    cx = idx["x"], cy = idx["y"], ca = idx["active"];
  } else {
    throw FormatError(path + ": input trace header must be 't,x,y,active' or a session log header");
  }
  std::vector<InputTraceRow> out;
  long prev = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const auto where = path + ":" + std::to_string(t.line_numbers[i]);
    InputTraceRow r;
    r.t = detail::need_int(f[idx["t"]], where);
    if (r.t <= prev) throw FormatError(where + ": t must be strictly increasing and >= 1");
    prev = r.t;
    if (!csv::trim(f[cx]).empty() || !csv::trim(f[cy]).empty()) {
      HumanInput h;
      h.pos = {detail::need_double(f[cx], where), detail::need_double(f[cy], where)};
      if (!(h.pos.x >= -1.0 && h.pos.x <= 1.0 && h.pos.y >= -1.0 && h.pos.y <= 1.0))
        throw FormatError(where + ": position out of range [-1, 1]");
      h.active = detail::need_flag(f[ca], where);
      r.input = h;
    }
    out.push_back(r);
  }
  return out;
}

inline void write_input_trace(const std::string& path, const std::vector<InputTraceRow>& rows) {
  csv::Writer w(path);
  w.row({"t", "x", "y", "active"});
  for (const auto& r : rows) {
    if (!r.input) {
      w.row({std::to_string(r.t), "", "", "0"});
      continue;
    }
    w.row({std::to_string(r.t), csv::format_double(r.input->pos.x), csv::format_double(r.input->pos.y),
           r.input->active ? "1" : "0"});
  }
}

inline void write_training_report(const std::string& path, const std::vector<EpochReport>& rows) {
  csv::Writer w(path);
  w.row({"epoch", "post_rec", "prior_rec", "regulation", "nelbo"});
  for (const auto& r : rows)
    w.row({std::to_string(r.epoch), csv::format_double(r.post_rec), csv::format_double(r.prior_rec),
           csv::format_double(r.regulation), csv::format_double(r.nelbo)});
}

}  // namespace pvrnn
