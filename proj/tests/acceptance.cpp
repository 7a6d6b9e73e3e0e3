// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Artifacts land in the directory given as the
// first argument (default: ./acceptance_out).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "pvrnn/io/checkpoint.hpp"
#include "pvrnn/io/primitives.hpp"
#include "pvrnn/io/run_config.hpp"
#include "pvrnn/io/session_log.hpp"
#include "pvrnn/observer/congruence.hpp"
#include "pvrnn/observer/pipeline.hpp"
#include "pvrnn/service/runner.hpp"
#include "pvrnn/train/gradcheck.hpp"
#include "pvrnn/train/trainer.hpp"

using namespace pvrnn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void gradient_check_criterion() {
  const auto t0 = Clock::now();
  const auto cfg = tiny_gradcheck_config();
  GradCheckOptions opt;
  opt.rtol = 1e-4;
  opt.atol = 1e-6;
  std::size_t checked = 0, failed = 0;
  double worst = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto pr = random_gradcheck_problem(cfg, 4, seed);
    const auto rep = gradient_check(pr.targets, pr.record, pr.params, pr.window, cfg, opt);
    checked += rep.checked;
    failed += rep.failures.size();
    worst = std::max(worst, rep.max_abs_error);
  }
  const double secs = seconds_since(t0);
  report(1, "gradient check (2 layers, d 3/2, z 1/1, T 4)", failed == 0 && secs < 10.0,
         fmt("%zu entries, %zu outside rtol 1e-4/atol 1e-6, max abs err %.2e, %.2f s", checked, failed, worst, secs));
}

void kl_softmax_criterion(const NetworkConfig& net) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> rho(-3.0, 3.0);
  std::size_t negative = 0;
  double min_kl = 1e300, max_self = 0.0, min_distinct = 1e300;
  for (int i = 0; i < 100000; ++i) {
    Vec mq(1), sq(1), mp(1), sp(1);
    mq << n(rng);
    mp << n(rng);
    sq << std::exp(rho(rng));
    sp << std::exp(rho(rng));
    const double kl = kl_gaussian(mq, sq, mp, sp)[0];
    min_kl = std::min(min_kl, kl);
    if (kl < 0.0) ++negative;
    max_self = std::max(max_self, std::abs(kl_gaussian(mq, sq, mq, sq)[0]));
    if (mq[0] != mp[0] || sq[0] != sp[0]) min_distinct = std::min(min_distinct, kl);
  }
  // softmax frames from random logits and encoded points
  const SoftmaxCodec codec(net);
  double worst_norm = 0.0;
  bool nonneg = true;
  for (int i = 0; i < 10000; ++i) {
    Vec logits(net.softmax_bins);
    for (auto& v : logits) v = 20.0 * n(rng);
    const Vec p = softmax(logits);
    worst_norm = std::max(worst_norm, std::abs(p.sum() - 1.0));
    nonneg = nonneg && (p.array() >= 0.0).all();
    const auto f = codec.encode_point({std::tanh(n(rng)), std::tanh(n(rng))});
    for (int c = 0; c < f.dof(); ++c) worst_norm = std::max(worst_norm, std::abs(f.channel(c).sum() - 1.0));
  }
  double worst_rt = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double v = -1.0 + 2.0 * i / 99.0;
    worst_rt = std::max(worst_rt, std::abs(codec.decode(codec.encode(v)) - v));
  }
  const double secs = seconds_since(t0);
  const bool pass = negative == 0 && max_self <= 1e-12 && min_distinct > 0.0 && worst_norm <= 1e-12 && nonneg &&
                    worst_rt < 0.01 && secs < 5.0;
  report(2, "KL and softmax suite", pass,
         fmt("1e5 KL draws: %zu negative (min %.3g), self-KL max %.1e, distinct-pair KL min %.2e; "
             "frame normalization err %.1e; 100-point roundtrip max err %.2e; %.2f s",
             negative, min_kl, max_self, min_distinct, worst_norm, worst_rt, secs));
}

double ls_slope(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  const double xm = (n - 1.0) / 2.0;
  double ym = 0.0;
  for (double v : y) ym += v;
  ym /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sxy += (static_cast<double>(i) - xm) * (y[i] - ym);
    sxx += (static_cast<double>(i) - xm) * (static_cast<double>(i) - xm);
  }
  return sxy / sxx;
}

ModelCheckpoint training_criterion(const RunConfig& cfg, const PrimitiveSet& prims, const fs::path& out) {
  const auto t0 = Clock::now();
  const auto set = encode_primitives(prims, cfg.network);
  Trainer trainer(set, cfg.network, cfg.training.options);
  std::vector<EpochReport> rep;
  std::string diverged;
  for (int e = 0; e < cfg.training.epochs; ++e) {
    try {
      rep.push_back(trainer.run_epoch());
    } catch (const DivergenceError& err) {
      diverged = err.what();
      break;
    }
  }
  write_training_report((out / "training_report.csv").string(), rep);
  ModelCheckpoint model{cfg.network,         {},
                        trainer.params(),    trainer.windows(),
                        trainer.param_adam(), trainer.window_adam(),
                        trainer.epochs_done()};
  for (const auto& s : set.sequences) model.labels.push_back(s.label);
  save_model(model, (out / "model.ckpt").string());

  const int n = static_cast<int>(rep.size());
  if (!diverged.empty() || n < 1000) {
    report(3, "desk training", false, fmt("diverged after %d epochs: %s", n, diverged.c_str()));
    return model;
  }
  const double drop = 1.0 - rep.back().post_rec / rep.front().post_rec;
  std::vector<double> tail;
  for (int i = n - 1000; i < n; ++i) tail.push_back(rep[i].nelbo);
  const double slope = ls_slope(tail);
  report(3, "desk training", n == 5000 && drop >= 0.8 && slope < 0.0,
         fmt("%d epochs in %.0f s; post_rec %.3f -> %.4f (drop %.2f%%); N-ELBO LS slope over last 1000 epochs %.3e/epoch",
             n, seconds_since(t0), rep.front().post_rec, rep.back().post_rec, 100.0 * drop, slope));
  return model;
}

void regeneration_criterion(const ModelCheckpoint& model, const RunConfig& cfg, const PrimitiveSet& prims) {
  int good = 0;
  std::ostringstream detail;
  for (std::size_t s = 0; s < model.windows.size(); ++s) {
    const auto r = seeded_prior_rollout(model.params, model.network, model.windows[s], 72,
                                        cfg.training.options.warmup_steps);
    const auto path = decode_rollout(r, model.network);
    double se = 0.0;
    for (int t = 0; t < 72; ++t) {
      const auto& ref = prims.primitives[s].rows[static_cast<std::size_t>(t)];
      se += (path[t].x - ref.x) * (path[t].x - ref.x) + (path[t].y - ref.y) * (path[t].y - ref.y);
    }
    const double rmse = std::sqrt(se / (2.0 * 72.0));
    if (rmse < 0.1) ++good;
    detail << model.labels[s] << " " << fmt("%.3f", rmse) << (s + 1 < model.windows.size() ? ", " : "");
  }
  report(4, "prior regeneration (72 steps, zeros eps)", good >= 5,
         fmt("%d/7 primitives with RMSE < 0.1 (", good) + detail.str() + ")");
}

ObserverCheckpoint observer_criterion(const ModelCheckpoint& model, const RunConfig& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  const auto run = train_observer_on_model(model, cfg);
  const double secs = seconds_since(t0);
  save_observer(run.checkpoint, (out / "observer.ckpt").string());
  double min_diag = 1.0, max_off_row = 0.0;
  for (Eigen::Index r = 0; r < run.confusion.rows(); ++r) {
    min_diag = std::min(min_diag, run.confusion(r, r));
    max_off_row = std::max(max_off_row, run.confusion.row(r).sum() - run.confusion(r, r));
  }
  report(5, "observer confusion on sigma 0.02 rollouts", min_diag >= 0.95 && max_off_row <= 0.05 && secs < 120.0,
         fmt("min diagonal %.4f, max off-diagonal row mass %.4f, %zu test windows, %.1f s", min_diag, max_off_row,
             run.test_samples, secs));
  return run.checkpoint;
}

void off_manifold_criterion(const ModelCheckpoint& model, const RunConfig& cfg, const PrimitiveSet& prims) {
  const auto& net = model.network;
  const SoftmaxCodec codec(net);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-0.95, 0.95);
  auto off_manifold = [&](Point2 p) {
    for (const auto& prim : prims.primitives)
      for (const auto& q : prim.rows)
        if (std::hypot(p.x - q.x, p.y - q.y) < 0.15) return false;
    return true;
  };
  int monotone = 0, monotone_plain = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Point2 p;
    do p = {u(rng), u(rng)};
    while (!off_manifold(p));
    auto w = reset_session(net, cfg.deliberation.window);
    auto eps = EpsilonSource::sampled(1000 + static_cast<std::uint64_t>(trial));
    for (int t = 0; t < cfg.deliberation.window; ++t) {
      std::vector<Vec> e;
      for (const auto& l : net.layers) e.push_back(eps.draw(l.z_units));
      push_sensation(w, codec.encode_point(p), zero_step_adaptation(net), e, model.params, net);
    }
    auto decreasing = [](const InferenceResult& res) {
      auto trace = res.nelbo_trace;
      trace.push_back(res.final_nelbo);
      bool ok = trace.size() == 11;
      for (std::size_t i = 1; ok && i < trace.size(); ++i) ok = trace[i] < trace[i - 1];
      return ok;
    };
    auto plain = w;
    monotone_plain += decreasing(infer_window(plain, model.params, net, 10, cfg.deliberation.rate, std::nullopt, 0));
    monotone += decreasing(infer_window(w, model.params, net, 10, cfg.deliberation.rate, std::nullopt,
                                        cfg.deliberation.max_backtracks));
  }
  report(6, "constant off-manifold buffer", monotone >= 95,
         fmt("N-ELBO strictly decreasing over the first 10 epochs in %d/100 trials "
             "(max_backtracks %d; fixed-step descent: %d/100)",
             monotone, cfg.deliberation.max_backtracks, monotone_plain));
}

std::vector<InputTraceRow> scripted_trace(int ticks) {
  // the human joins for a few stretches, drawing a slow circle
  std::vector<InputTraceRow> rows;
  for (long t = 1; t <= ticks; ++t) {
    const bool active = (t > 300 && t <= 500) || (t > 900 && t <= 1000) || (t > 1400 && t <= 1700);
    const double a = 0.05 * static_cast<double>(t);
    rows.push_back({t, HumanInput{{0.5 * std::cos(a), 0.5 * std::sin(a)}, active}});
  }
  return rows;
}

std::string realtime_criterion(const RunConfig& cfg, const SessionAssets& assets, const fs::path& out) {
  auto session = make_session(cfg, assets);
  const auto trace = scripted_trace(2000);
  write_input_trace((out / "input_trace.csv").string(), trace);
  PacingStats stats;
  const auto log = run_paced(session, 2000, cfg.session.tick_ms, trace_input(trace), {}, &stats);
  const auto path = (out / "session_live.csv").string();
  write_session_log(path, log);
  const auto rows = read_session_log(path).size();
  const double expected = 2000.0 * cfg.session.tick_ms;
  const bool pass = std::abs(stats.duration_ms - expected) <= 0.02 * expected && stats.p95_jitter_ms <= 10.0 &&
                    rows == 2000;
  report(7, "2000-tick headless session", pass,
         fmt("duration %.2f s (target 200 s +/- 2%%), p95 jitter %.2f ms, max jitter %.2f ms, %zu log rows, "
             "%d ticks cut by the budget",
             stats.duration_ms / 1000.0, stats.p95_jitter_ms, stats.max_jitter_ms, rows, stats.budget_truncations));
  return path;
}

void replay_criterion(const RunConfig& cfg, const SessionAssets& assets, const std::string& recorded,
                      const fs::path& out) {
  const auto rec = read_session_log(recorded);
  const auto input = trace_input(read_input_trace(recorded));
  std::vector<int> epochs;
  for (const auto& r : rec) epochs.push_back(r.inference_epochs_run);
  std::string bytes[2];
  for (int k = 0; k < 2; ++k) {
    auto s = make_session(cfg, assets);
    const auto log = run_virtual(s, static_cast<int>(rec.size()), cfg.session.tick_ms, input, &epochs);
    const auto p = out / ("session_replay_" + std::to_string(k + 1) + ".csv");
    write_session_log(p.string(), log);
    bytes[k] = read_file(p);
  }
  // the replay should also retrace the live robot intentions
  auto s = make_session(cfg, assets);
  const auto again = run_virtual(s, static_cast<int>(rec.size()), cfg.session.tick_ms, input, &epochs);
  double worst = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i)
    worst = std::max({worst, std::abs(again[i].mixed.x - rec[i].mixed.x), std::abs(again[i].mixed.y - rec[i].mixed.y)});
  report(8, "replay determinism", !bytes[0].empty() && bytes[0] == bytes[1],
         fmt("two replays of %zu ticks %s (%zu bytes); max |mixed - live mixed| %.2e", rec.size(),
             bytes[0] == bytes[1] ? "byte-identical" : "DIFFER", bytes[0].size(), worst));
}

void congruence_criterion() {
  const std::vector<int> agree(50, 1);
  std::vector<int> alternating;
  for (int t = 0; t < 50; ++t) alternating.push_back(t % 2);
  const auto pa = congruence(agree, 10);
  const auto pb = congruence(alternating, 10);
  bool ok = true;
  for (double v : pa) ok = ok && v == 1.0;
  for (std::size_t t = 9; t < pb.size(); ++t) ok = ok && std::abs(pb[t] - 0.5) < 1e-15;
  report(9, "congruence oracles (Y = 10)", ok, fmt("all-agree P = %.3f, alternating P = %.3f", pa.back(), pb.back()));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out);
  try {
    RunConfig cfg = load_config((fs::path(PVRNN_SOURCE_DIR) / "configs/default.json").string());
    cfg.paths.primitives = (fs::path(PVRNN_SOURCE_DIR) / cfg.paths.primitives).string();
    const auto prims = load_primitives(cfg.paths.primitives);

    gradient_check_criterion();
    kl_softmax_criterion(cfg.network);
    congruence_criterion();
    const auto model = training_criterion(cfg, prims, out);
    regeneration_criterion(model, cfg, prims);
    const auto observer = observer_criterion(model, cfg, out);
    off_manifold_criterion(model, cfg, prims);

    SessionAssets assets;
    assets.model = model;
    assets.params = std::make_shared<const NetworkParams>(model.params);
    assets.observer = observer;
    const auto live = realtime_criterion(cfg, assets, out);
    replay_criterion(cfg, assets, live, out);
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance run aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ALL PASS" : "NOT PASSING", g_failures);
  return g_failures == 0 ? 0 : 1;
}
