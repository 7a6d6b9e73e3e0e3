#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <iostream>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pvrnn/io/primitives.hpp"
#include "pvrnn/service/runner.hpp"
#include "pvrnn/service/socket.hpp"
#include "pvrnn/service/wire.hpp"

namespace pvrnn {

/// Latest-input mailbox between the network reader and the tick loop.
class InputMailbox {
 public:
  void post(HumanInput in, std::optional<long> seq) {
    std::lock_guard<std::mutex> lock(mu_);
    if (latest_) ++superseded_;
    latest_ = in;
    seq_ = seq;
  }

  struct Drained {
    std::optional<HumanInput> input;
    std::optional<long> seq;
    int dropped = 0;
  };

  /// Takes the most recent input; older ones posted since the last drain are
  /// reported as dropped.
  Drained drain() {
    std::lock_guard<std::mutex> lock(mu_);
    Drained d{latest_, seq_, superseded_};
    if (latest_) last_ = latest_;
    latest_.reset();
    seq_.reset();
    superseded_ = 0;
    return d;
  }

  /// Input held by the human between messages (cursor still, key state kept).
  std::optional<HumanInput> held() {
    std::lock_guard<std::mutex> lock(mu_);
    return last_;
  }

 private:
  std::mutex mu_;
  std::optional<HumanInput> latest_;
  std::optional<HumanInput> last_;
  std::optional<long> seq_;
  int superseded_ = 0;
};

/// Single-owner queue feeding the log writer thread.
template <class T>
class WorkQueue {
 public:
  void push(T v) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }
  std::optional<T> pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

/// Session service. Each accepted client gets its own session with three
/// workers: the network reader, the tick loop (sole owner of the model state)
/// and the log writer.
class Server {
 public:
  Server(RunConfig cfg, SessionAssets assets) : cfg_(std::move(cfg)), assets_(std::move(assets)) {
    if (std::filesystem::is_directory(cfg_.paths.primitives)) {
      for (auto& p : load_primitives(cfg_.paths.primitives).primitives)
        hello_.watermark.emplace_back(p.label, std::move(p.rows));
    }
    hello_.ticks = cfg_.session.ticks;
    hello_.tick_ms = cfg_.session.tick_ms;
    hello_.gamma = cfg_.mixer.gamma;
    hello_.rate_cap = cfg_.mixer.rate_cap;
    hello_.window = cfg_.deliberation.window;
    hello_.seed = cfg_.seed;
    hello_.config_hash = std::to_string(config_hash(cfg_));
    hello_.labels = assets_.observer ? assets_.observer->labels : assets_.model.labels;
  }

  /// Binds the listening socket; returns the bound port (useful with port 0).
  int bind() {
    listener_ = net::listen_tcp(cfg_.service.host, cfg_.service.port);
    return net::bound_port(listener_);
  }

  /// Accepts clients until `stop()`; `max_clients` > 0 ends after that many
  /// sessions have finished.
  void run(int max_clients = 0) {
    if (!listener_.valid()) bind();
    int accepted = 0;
    while (!stopping_) {
      reap();
      if (max_clients > 0 && accepted >= max_clients) break;
      auto sock = net::accept_for(listener_, 100);
      if (!sock) continue;
      auto ch = std::make_shared<net::Channel>(std::move(*sock));
      if (active_sessions() >= cfg_.service.max_sessions) {
        if (ch->handshake(2000)) ch->send(wire::encode(wire::error("", 0, "server busy: session limit reached")));
        continue;
      }
      ++accepted;
      std::lock_guard<std::mutex> lock(mu_);
      auto& slot = sessions_.emplace_back();
      slot.done = std::make_shared<std::atomic<bool>>(false);
      slot.thread = std::thread([this, ch, done = slot.done, id = next_id_++] {
        try {
          serve_client(ch, "s" + std::to_string(id));
        } catch (const std::exception& e) {
          std::cerr << "session s" << id << " failed: " << e.what() << "\n";
          ch->send(wire::encode(wire::error("s" + std::to_string(id), 0, e.what())));
        }
        *done = true;
      });
    }
    std::list<Slot> finishing;
    {
      std::lock_guard<std::mutex> lock(mu_);
      finishing.swap(sessions_);
    }
    for (auto& s : finishing)
      if (s.thread.joinable()) s.thread.join();
  }

  void stop() { stopping_ = true; }
  const std::vector<std::string>& written_logs() const { return logs_; }

 private:
  struct Slot {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  int active_sessions() {
    std::lock_guard<std::mutex> lock(mu_);
    int n = 0;
    for (const auto& s : sessions_) n += *s.done ? 0 : 1;
    return n;
  }

  void reap() {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (*it->done) {
        it->thread.join();
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void serve_client(const std::shared_ptr<net::Channel>& ch, const std::string& id) {
    if (!ch->handshake(10000)) return;
    // the client opens with hello; anything else is refused
    std::optional<std::string> first;
    for (int i = 0; i < 100 && !first && !ch->closed(); ++i) first = ch->recv(100);
    if (!first) return;
    try {
      if (wire::decode(*first).kind != wire::Kind::hello) throw FormatError("first message must be hello");
    } catch (const FormatError& e) {
      ch->send(wire::encode(wire::error(id, 0, e.what())));
      return;
    }

    Session session = make_session(cfg_, assets_);
    ch->send(wire::encode(wire::hello(id, hello_)));

    InputMailbox mailbox;
    std::atomic<bool> client_gone{false};
    std::atomic<long> session_tick{0};
    std::thread reader([&] {
      while (!client_gone && !stopping_) {
        auto msg = ch->recv(50);
        if (ch->closed()) break;
        if (!msg) continue;
        try {
          const auto m = wire::decode(*msg);
          if (m.kind == wire::Kind::bye) break;
          if (m.kind != wire::Kind::input) throw FormatError(std::string("unexpected message kind: ") + wire::kind_name(m.kind));
          const auto in = wire::parse_input(m);
          mailbox.post(in.input, in.seq);
        } catch (const FormatError& e) {
          ch->send(wire::encode(wire::error(id, session_tick.load(), e.what())));
        }
      }
      client_gone = true;
    });

    const auto stem = std::filesystem::path(cfg_.paths.log_dir) / ("session_" + id + "_" + timestamp());
    const std::string log_path = stem.string() + ".csv";
    std::filesystem::create_directories(cfg_.paths.log_dir);
    WorkQueue<TickRecord> to_log;
    std::thread writer([&] {
      SessionLogWriter w(log_path);
      while (auto r = to_log.pop()) w.append(*r);
      w.flush();
    });

    std::optional<CongruenceTracker> tracker;
    if (assets_.observer)
      tracker.emplace(assets_.observer->net, cfg_.observer.congruence_window, cfg_.observer.event_gap);

    PacingStats stats;
    std::optional<long> last_seq;
    auto input = [&](long t) -> std::optional<HumanInput> {
      auto d = mailbox.drain();
      if (d.dropped > 0)
        ch->send(wire::encode(wire::event(id, t, "input_dropped", {{"count", d.dropped}})));
      last_seq = d.seq;
      return d.input ? d.input : mailbox.held();
    };
    auto sink = [&](const TickRecord& r) {
      to_log.push(r);
      std::optional<ObserverTick> obs;
      if (tracker) obs = tracker->push(r);
      ch->send(wire::encode(wire::state(id, r, obs ? &*obs : nullptr, hello_.labels, last_seq)));
      session_tick = r.t;
    };
    auto stop = [&] { return client_gone.load() || stopping_.load(); };
    const auto log = run_paced(session, cfg_.session.ticks, cfg_.session.tick_ms, input, sink, &stats, stop);

    const bool complete = static_cast<int>(log.size()) == cfg_.session.ticks;
    ch->send(wire::encode(wire::bye(id, session.steps(), complete ? "finished" : "stopped")));
    client_gone = true;
    reader.join();
    to_log.close();
    writer.join();

    const std::string mode = complete ? "live" : "live-interrupted";
    write_json(stem.string() + ".meta.json", {{"format_version", 1},
                                              {"mode", mode},
                                              {"seed", cfg_.seed},
                                              {"config_hash", std::to_string(config_hash(cfg_))},
                                              {"params_hash", std::to_string(hash_params(*assets_.params))},
                                              {"config", to_json(cfg_)}});
    write_json(stem.string() + ".summary.json", session_summary(cfg_, assets_, log, &stats, mode));
    std::lock_guard<std::mutex> lock(mu_);
    logs_.push_back(log_path);
  }

  static std::string timestamp() {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    return std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(now).count());
  }

  RunConfig cfg_;
  SessionAssets assets_;
  wire::HelloInfo hello_;
  net::Socket listener_;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::list<Slot> sessions_;
  std::vector<std::string> logs_;
  int next_id_ = 1;
};

}  // namespace pvrnn
