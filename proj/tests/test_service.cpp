#include <filesystem>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "pvrnn/service/framing.hpp"
#include "pvrnn/service/runner.hpp"
#include "pvrnn/service/server.hpp"
#include "pvrnn/service/socket.hpp"
#include "pvrnn/service/wire.hpp"

using namespace pvrnn;
namespace fs = std::filesystem;

TEST(Wire, EncodeDecodeRoundTrip) {
  wire::Message m{wire::Kind::state, "s1", 42, {{"t", 42}, {"robot", {0.1, -0.2}}}};
  const auto back = wire::decode(wire::encode(m));
  EXPECT_EQ(back.kind, wire::Kind::state);
  EXPECT_EQ(back.session, "s1");
  EXPECT_EQ(back.tick, 42);
  EXPECT_EQ(back.payload, m.payload);
}

TEST(Wire, DecodeRejectsMalformedEnvelopes) {
  EXPECT_THROW(wire::decode("not json"), FormatError);
  EXPECT_THROW(wire::decode("[1,2]"), FormatError);
  EXPECT_THROW(wire::decode(R"({"tick": 1})"), FormatError);
  EXPECT_THROW(wire::decode(R"({"kind": "shout"})"), FormatError);
  EXPECT_THROW(wire::decode(R"({"kind": "input", "extra": 1})"), FormatError);
  EXPECT_THROW(wire::decode(R"({"kind": "input", "tick": 1.5})"), FormatError);
  EXPECT_THROW(wire::decode(R"({"kind": "input", "payload": []})"), FormatError);
  EXPECT_NO_THROW(wire::decode(R"({"kind": "bye"})"));
}

TEST(Wire, ParseInputValidatesPayload) {
  const auto ok = wire::parse_input(wire::decode(R"({"kind":"input","payload":{"x":0.5,"y":-1,"active":true,"seq":7}})"));
  EXPECT_EQ(ok.input.pos.x, 0.5);
  EXPECT_EQ(ok.input.pos.y, -1.0);
  EXPECT_TRUE(ok.input.active);
  EXPECT_EQ(ok.seq, 7);

  for (const char* bad : {R"({"kind":"input","payload":{"x":1.5,"y":0,"active":true}})",
                          R"({"kind":"input","payload":{"x":0,"y":0}})",
                          R"({"kind":"input","payload":{"x":"0","y":0,"active":false}})",
                          R"({"kind":"input","payload":{"x":0,"y":0,"active":1}})",
                          R"({"kind":"input","payload":{"x":0,"y":0,"active":true,"z":0}})",
                          R"({"kind":"input","payload":{"x":0,"y":0,"active":true,"seq":0.5}})",
                          R"({"kind":"hello","payload":{"x":0,"y":0,"active":true}})"})
    EXPECT_THROW(wire::parse_input(wire::decode(bad)), FormatError) << bad;
}

TEST(Wire, StateCarriesTheTickRecord) {
  TickRecord r;
  r.t = 3;
  r.robot_intent = {0.1, 0.2};
  r.mixed = {0.3, 0.4};
  r.nelbo = 12.5;
  r.inference_epochs_run = 30;
  const auto m = wire::state("s", r, nullptr, {}, 9L);
  EXPECT_EQ(m.tick, 3);
  EXPECT_EQ(m.payload["robot"][1], 0.2);
  EXPECT_TRUE(m.payload["human"].is_null());
  EXPECT_EQ(m.payload["epochs"], 30);
  EXPECT_EQ(m.payload["input_seq"], 9);
  EXPECT_FALSE(m.payload.contains("c"));
}

TEST(LengthPrefixed, SplitFeedsReassemble) {
  const auto a = framing::encode_length_prefixed("hello");
  const auto b = framing::encode_length_prefixed(std::string(300, 'x'));
  EXPECT_EQ(a.substr(0, 4), std::string("\0\0\0\5", 4));
  const std::string stream = a + b;
  framing::LengthPrefixedDecoder d;
  std::vector<std::string> got;
  for (char c : stream) {
    d.feed(std::string_view(&c, 1));
    while (auto m = d.next()) got.push_back(*m);
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0], "hello");
  EXPECT_EQ(got[1].size(), 300u);
}

TEST(LengthPrefixed, OversizeFrameIsRejected) {
  framing::LengthPrefixedDecoder d;
  d.feed(std::string("\x7f\xff\xff\xff", 4));
  EXPECT_THROW(d.next(), FormatError);
  EXPECT_THROW(framing::encode_length_prefixed(std::string(framing::kMaxFrame + 1, 'a')), FormatError);
}

TEST(WebSocket, AcceptKeyMatchesReferenceExample) {
  EXPECT_EQ(framing::websocket_accept("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST(WebSocket, KeyIsFoundCaseInsensitively) {
  const std::string req =
      "GET /session HTTP/1.1\r\nHost: x\r\nupgrade: websocket\r\nSEC-WEBSOCKET-KEY:  abc==  \r\n\r\n";
  EXPECT_EQ(framing::websocket_key(req), "abc==");
  EXPECT_FALSE(framing::websocket_key("GET / HTTP/1.1\r\nHost: x\r\n\r\n"));
  const auto resp = framing::websocket_handshake_response("dGhlIHNhbXBsZSBub25jZQ==");
  EXPECT_EQ(resp.rfind("HTTP/1.1 101", 0), 0u);
  EXPECT_NE(resp.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo=\r\n"), std::string::npos);
}

TEST(WebSocket, MaskedAndLongFramesDecode) {
  framing::WebSocketDecoder d;
  d.feed(framing::encode_websocket("Hello", framing::WsOpcode::text, 0x37fa213d));
  const auto f = d.next();
  ASSERT_TRUE(f);
  EXPECT_EQ(f->payload, "Hello");
  const std::string big(70000, 'q');
  const auto enc = framing::encode_websocket(big);
  EXPECT_EQ(static_cast<unsigned char>(enc[1]), 127);
  d.feed(enc);
  EXPECT_EQ(d.next()->payload, big);
  const std::string mid(200, 'm');
  EXPECT_EQ(static_cast<unsigned char>(framing::encode_websocket(mid)[1]), 126);
}

TEST(WebSocket, FragmentsReassembleAroundControlFrames) {
  // "Hel" (text, not final), ping, "lo" (continuation, final)
  std::string s = {static_cast<char>(0x01), 0x03, 'H', 'e', 'l'};
  s += framing::encode_websocket("p", framing::WsOpcode::ping);
  s += std::string{static_cast<char>(0x80), 0x02, 'l', 'o'};
  framing::WebSocketDecoder d;
  d.feed(s);
  const auto ping = d.next();
  ASSERT_TRUE(ping);
  EXPECT_EQ(ping->op, framing::WsOpcode::ping);
  const auto msg = d.next();
  ASSERT_TRUE(msg);
  EXPECT_EQ(msg->op, framing::WsOpcode::text);
  EXPECT_EQ(msg->payload, "Hello");
  EXPECT_FALSE(d.next());
}

TEST(WebSocket, StrayContinuationIsRejected) {
  framing::WebSocketDecoder d;
  d.feed(std::string{static_cast<char>(0x80), 0x01, 'x'});
  EXPECT_THROW(d.next(), FormatError);
}

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("pvrnn_svc_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small random model saved as a checkpoint, plus a run config pointing at it.
RunConfig tiny_setup(const TempDir& dir, int ticks, double tick_ms) {
  RunConfig cfg;
  cfg.network.layers = {{6, 2, 2.0}, {3, 1, 5.0}};
  cfg.network.w = {0.1, 0.1};
  cfg.deliberation.window = 5;
  cfg.deliberation.epochs = 5;
  cfg.session.ticks = ticks;
  cfg.session.tick_ms = tick_ms;
  cfg.service.port = 0;
  cfg.paths.model = (dir / "model.ckpt").string();
  cfg.paths.observer = (dir / "observer.ckpt").string();
  cfg.paths.log_dir = (dir / "sessions").string();
  cfg.paths.primitives = (fs::path(PVRNN_SOURCE_DIR) / "data/primitives").string();
  ModelCheckpoint ck;
  ck.network = cfg.network;
  ck.labels = {"Head"};
  ck.params = init_params(cfg.network, 3);
  auto w = AdaptiveWindow::zeros(cfg.network, 8);
  w.steps[0].mu[0].setConstant(0.4);
  ck.windows = {w};
  ck.window_adam = {AdamState{}};
  save_model(ck, cfg.paths.model);
  return cfg;
}

std::vector<InputTraceRow> scripted_trace(int ticks) {
  std::vector<InputTraceRow> rows;
  for (long t = 1; t <= ticks; ++t) {
    if (t % 4 == 0) continue;
    rows.push_back({t, HumanInput{{0.6 * std::sin(0.1 * t), 0.6 * std::cos(0.1 * t)}, t > 10}});
  }
  return rows;
}

}  // namespace

TEST(Runner, VirtualRunsAreDeterministic) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 40, 100.0);
  const auto assets = load_assets(cfg, false);
  const auto input = trace_input(scripted_trace(40));
  auto s1 = make_session(cfg, assets);
  auto s2 = make_session(cfg, assets);
  write_session_log((dir / "a.csv").string(), run_virtual(s1, 40, 100.0, input));
  write_session_log((dir / "b.csv").string(), run_virtual(s2, 40, 100.0, input));
  EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));
  const auto log = read_session_log((dir / "a.csv").string());
  ASSERT_EQ(log.size(), 40u);
  EXPECT_EQ(log[9].wall_time_ms, 900.0);
  EXPECT_FALSE(log[3].human_intent);  // t = 4 has no row in the trace
}

TEST(Runner, RecordedEpochCountsAreReplayed) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 30, 100.0);
  const auto assets = load_assets(cfg, false);
  const auto input = trace_input(scripted_trace(30));
  std::vector<int> epochs(30);
  for (int i = 0; i < 30; ++i) epochs[i] = i % 3;
  auto s1 = make_session(cfg, assets);
  const auto rec = run_virtual(s1, 30, 100.0, input, &epochs);
  auto s2 = make_session(cfg, assets);
  const auto rep = run_virtual(s2, 30, 100.0, input, &epochs);
  for (std::size_t i = 0; i < rec.size(); ++i) {
    EXPECT_EQ(rec[i].mixed.x, rep[i].mixed.x);
    EXPECT_EQ(rec[i].nelbo, rep[i].nelbo);
  }
  for (std::size_t i = 5; i < rec.size(); ++i) EXPECT_EQ(rec[i].inference_epochs_run, epochs[i]);
}

TEST(Runner, PacedRunHoldsThePeriod) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 20, 20.0);
  const auto assets = load_assets(cfg, false);
  auto s = make_session(cfg, assets);
  PacingStats stats;
  const auto log = run_paced(s, 20, 20.0, trace_input(scripted_trace(20)), {}, &stats);
  EXPECT_EQ(log.size(), 20u);
  EXPECT_NEAR(stats.duration_ms, 400.0, 40.0);
  EXPECT_LT(stats.p95_jitter_ms, 10.0);
}

TEST(Runner, MissingAssetsAreConfigErrors) {
  TempDir dir;
  auto cfg = tiny_setup(dir, 5, 10.0);
  EXPECT_THROW(load_assets(cfg, true), ConfigError);  // no observer saved
  cfg.session.start_primitive = "Wing";
  const auto assets = load_assets(cfg, false);
  EXPECT_THROW(make_session(cfg, assets), ConfigError);
  cfg.paths.model = (dir / "none.ckpt").string();
  EXPECT_THROW(load_assets(cfg, false), ConfigError);
}

namespace {

struct RunningServer {
  Server server;
  int port;
  std::thread thread;

  RunningServer(const RunConfig& cfg, int max_clients)
      : server(cfg, load_assets(cfg, false)), port(server.bind()), thread([this, max_clients] { server.run(max_clients); }) {}
  ~RunningServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

std::vector<wire::Message> drain_until_bye(net::Client& c) {
  std::vector<wire::Message> out;
  for (int i = 0; i < 400; ++i) {
    auto m = c.recv(100);
    if (!m) {
      if (c.closed()) break;
      continue;
    }
    out.push_back(wire::decode(*m));
    if (out.back().kind == wire::Kind::bye) break;
  }
  return out;
}

}  // namespace

TEST(Server, LengthPrefixedSessionRunsToCompletion) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 8, 20.0);
  RunningServer rs(cfg, 1);
  net::Client c("127.0.0.1", rs.port);
  ASSERT_TRUE(c.send(wire::encode({wire::Kind::hello, "", 0, nlohmann::json::object()})));
  for (int i = 0; i < 3; ++i)
    c.send(wire::encode({wire::Kind::input, "", 0, {{"x", 0.2}, {"y", 0.1}, {"active", true}, {"seq", i}}}));
  const auto msgs = drain_until_bye(c);
  ASSERT_FALSE(msgs.empty());
  ASSERT_EQ(msgs.front().kind, wire::Kind::hello) << msgs.front().payload.dump();
  EXPECT_EQ(msgs.front().payload["ticks"], 8);
  EXPECT_EQ(msgs.front().payload["labels"], nlohmann::json::array({"Head"}));
  EXPECT_EQ(msgs.front().payload["watermark"].size(), 7u);
  long states = 0;
  for (const auto& m : msgs)
    if (m.kind == wire::Kind::state) {
      EXPECT_EQ(m.tick, ++states);
    }
  EXPECT_EQ(states, 8);
  EXPECT_EQ(msgs.back().kind, wire::Kind::bye);
  EXPECT_EQ(msgs.back().payload["reason"], "finished");
  rs.thread.join();
  ASSERT_EQ(rs.server.written_logs().size(), 1u);
  EXPECT_EQ(read_session_log(rs.server.written_logs()[0]).size(), 8u);
}

TEST(Server, FirstMessageMustBeHello) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 5, 20.0);
  RunningServer rs(cfg, 1);
  net::Client c("127.0.0.1", rs.port);
  c.send(wire::encode({wire::Kind::input, "", 0, {{"x", 0.0}, {"y", 0.0}, {"active", true}}}));
  const auto msgs = drain_until_bye(c);
  ASSERT_FALSE(msgs.empty());
  EXPECT_EQ(msgs.front().kind, wire::Kind::error);
}

TEST(Server, SecondClientIsToldTheServerIsBusy) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 40, 20.0);
  RunningServer rs(cfg, 0);
  net::Client a("127.0.0.1", rs.port);
  a.send(wire::encode({wire::Kind::hello, "", 0, nlohmann::json::object()}));
  auto first = a.recv(2000);
  ASSERT_TRUE(first);
  EXPECT_EQ(wire::decode(*first).kind, wire::Kind::hello);
  net::Client b("127.0.0.1", rs.port);
  b.send(wire::encode({wire::Kind::hello, "", 0, nlohmann::json::object()}));
  const auto reply = b.recv(3000);
  ASSERT_TRUE(reply);
  const auto m = wire::decode(*reply);
  EXPECT_EQ(m.kind, wire::Kind::error);
  EXPECT_NE(m.payload["message"].get<std::string>().find("busy"), std::string::npos);
  a.send(wire::encode({wire::Kind::bye, "", 0, nlohmann::json::object()}));
  const auto rest = drain_until_bye(a);
  ASSERT_FALSE(rest.empty());
  EXPECT_EQ(rest.back().kind, wire::Kind::bye);
  EXPECT_EQ(rest.back().payload["reason"], "stopped");
}

TEST(Server, WebSocketClientIsServed) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 5, 20.0);
  RunningServer rs(cfg, 1);
  auto sock = net::connect_tcp("127.0.0.1", rs.port);
  ASSERT_TRUE(sock.send_all(
      "GET /session HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n"));
  std::string buf;
  while (buf.find("\r\n\r\n") == std::string::npos) {
    auto b = sock.recv_some(2000);
    ASSERT_TRUE(b && !b->empty());
    buf += *b;
  }
  EXPECT_NE(buf.find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);
  framing::WebSocketDecoder d;
  d.feed(buf.substr(buf.find("\r\n\r\n") + 4));
  sock.send_all(framing::encode_websocket(wire::encode({wire::Kind::hello, "", 0, nlohmann::json::object()}), framing::WsOpcode::text, 0x11223344));
  std::vector<wire::Message> msgs;
  for (int i = 0; i < 100 && (msgs.empty() || msgs.back().kind != wire::Kind::bye); ++i) {
    while (auto f = d.next()) msgs.push_back(wire::decode(f->payload));
    if (!msgs.empty() && msgs.back().kind == wire::Kind::bye) break;
    auto b = sock.recv_some(100);
    if (b && b->empty()) break;
    if (b) d.feed(*b);
  }
  ASSERT_GE(msgs.size(), 7u);
  EXPECT_EQ(msgs.front().kind, wire::Kind::hello);
  EXPECT_EQ(msgs[1].kind, wire::Kind::state);
  EXPECT_EQ(msgs.back().kind, wire::Kind::bye);
}

TEST(Server, NoClientsWritesNoLogs) {
  TempDir dir;
  const auto cfg = tiny_setup(dir, 5, 20.0);
  {
    RunningServer rs(cfg, 0);
    std::this_thread::sleep_for(std::chrono::milliseconds(250));
  }
  EXPECT_FALSE(fs::exists(cfg.paths.log_dir));
}
