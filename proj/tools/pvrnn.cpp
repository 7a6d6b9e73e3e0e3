#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pvrnn/io/checkpoint.hpp"
#include "pvrnn/io/primitives.hpp"
#include "pvrnn/io/run_config.hpp"
#include "pvrnn/io/session_log.hpp"
#include "pvrnn/observer/congruence.hpp"
#include "pvrnn/observer/pipeline.hpp"
#include "pvrnn/service/runner.hpp"
#include "pvrnn/service/server.hpp"
#include "pvrnn/train/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace pvrnn;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kConfig = 3, kData = 4, kRuntime = 5 };

Server* g_server = nullptr;
volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) {
  g_interrupted = 1;
  if (g_server) g_server->stop();
}

RunConfig resolve_config(const std::string& flag, std::optional<std::uint64_t> seed) {
  std::string path = flag;
  if (path.empty()) {
    if (const char* env = std::getenv("PVRNN_CONFIG"); env && *env) path = env;
  }
  if (path.empty() && fs::exists("configs/default.json")) path = "configs/default.json";
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  if (seed) {
    cfg.seed = *seed;
    cfg.propagate_seed();
  }
  cfg.propagate_seed();
  cfg.validate();
  return cfg;
}

void ensure_parent(const std::string& path) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
}

std::string sibling(const std::string& path, const std::string& name) {
  return (fs::path(path).parent_path() / name).string();
}

int cmd_train(const RunConfig& cfg, std::optional<int> epochs, bool skip_observer, bool observer_only,
              std::string report_path) {
  if (report_path.empty()) report_path = sibling(cfg.paths.model, "training_report.csv");
  ModelCheckpoint model;
  if (observer_only) {
    model = load_model(cfg.paths.model);
  } else {
    const auto prims = load_primitives(cfg.paths.primitives);
    const auto set = encode_primitives(prims, cfg.network);
    const int n = epochs.value_or(cfg.training.epochs);
    if (n < 1) throw ConfigError("--epochs must be >= 1");
    std::cerr << "training " << set.sequences.size() << " primitives for " << n << " epochs\n";
    Trainer trainer(set, cfg.network, cfg.training.options);
    std::vector<EpochReport> report;
    std::string diagnostic;
    for (int e = 0; e < n && !g_interrupted; ++e) {
      try {
        report.push_back(trainer.run_epoch());
      } catch (const DivergenceError& err) {
        diagnostic = err.what();
        break;
      }
      const auto& r = report.back();
      if (r.epoch == 1 || r.epoch % cfg.training.report_every == 0)
        std::cerr << "epoch " << r.epoch << " post_rec " << r.post_rec << " prior_rec " << r.prior_rec << " nelbo "
                  << r.nelbo << "\n";
    }
    model.network = cfg.network;
    for (const auto& s : set.sequences) model.labels.push_back(s.label);
    model.params = trainer.params();
    model.windows = trainer.windows();
    model.param_adam = trainer.param_adam();
    model.window_adam = trainer.window_adam();
    model.epochs_done = trainer.epochs_done();
    ensure_parent(cfg.paths.model);
    save_model(model, cfg.paths.model);
    ensure_parent(report_path);
    write_training_report(report_path, report);
    std::cerr << "wrote " << cfg.paths.model << " and " << report_path << "\n";
    if (!diagnostic.empty()) {
      std::cerr << "training diverged: " << diagnostic << " (saved last good state)\n";
      return kFailed;
    }
  }
  if (skip_observer) return kOk;

  std::cerr << "training observer\n";
  const auto run = train_observer_on_model(model, cfg);
  ensure_parent(cfg.paths.observer);
  save_observer(run.checkpoint, cfg.paths.observer);
  const auto conf_path = sibling(cfg.paths.observer, "confusion.csv");
  csv::Writer w(conf_path);
  std::vector<std::string> header = {"true"};
  header.insert(header.end(), model.labels.begin(), model.labels.end());
  w.row(header);
  double worst = 1.0;
  for (Eigen::Index r = 0; r < run.confusion.rows(); ++r) {
    std::vector<std::string> row = {model.labels[static_cast<std::size_t>(r)]};
    for (Eigen::Index c = 0; c < run.confusion.cols(); ++c) row.push_back(csv::format_double(run.confusion(r, c)));
    w.row(row);
    worst = std::min(worst, run.confusion(r, r));
  }
  std::cerr << "wrote " << cfg.paths.observer << " and " << conf_path << " (min diagonal " << worst << ")\n";
  return kOk;
}

int cmd_generate(const RunConfig& cfg, int steps, const std::string& primitive, const std::string& eps,
                 const std::string& out) {
  const auto model = load_model(cfg.paths.model);
  const auto it = std::find(model.labels.begin(), model.labels.end(), primitive);
  if (it == model.labels.end()) throw ConfigError("unknown primitive: " + primitive);
  const auto& window = model.windows[static_cast<std::size_t>(it - model.labels.begin())];
  if (steps < 1) throw ConfigError("--steps must be >= 1");
  Rollout r;
  if (eps == "zeros") {
    r = seeded_prior_rollout(model.params, model.network, window, steps, cfg.training.options.warmup_steps);
  } else {
    auto src = EpsilonSource::sampled(cfg.seed);
    r.initial = initial_state(model.network);
    const LatentState* prev = &r.initial;
    for (int t = 0; t < steps; ++t) {
      if (t < cfg.training.options.warmup_steps && t < window.length())
        r.steps.push_back(posterior_step(*prev, window.steps[t], model.params, model.network, src));
      else
        r.steps.push_back(prior_step(*prev, model.params, model.network, src));
      r.outputs.push_back(decode_output(r.steps.back().layers[0].d, model.params, model.network));
      prev = &r.steps.back();
    }
  }
  const auto path = decode_rollout(r, model.network);
  auto emit = [&](std::ostream& os) {
    os << "t,x,y\n";
    for (std::size_t t = 0; t < path.size(); ++t)
      os << (t + 1) << "," << csv::format_double(path[t].x) << "," << csv::format_double(path[t].y) << "\n";
  };
  if (out.empty() || out == "-") {
    emit(std::cout);
  } else {
    ensure_parent(out);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + out);
    emit(f);
  }
  return kOk;
}

std::string default_log(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.paths.log_dir) / name).string();
}

int cmd_serve(RunConfig cfg, bool headless, const std::string& input, std::optional<int> ticks, std::string log,
              int clients, std::optional<int> port) {
  if (ticks) cfg.session.ticks = *ticks;
  if (port) cfg.service.port = *port;
  cfg.validate();
  const auto assets = load_assets(cfg, !headless);
  if (headless) {
    std::vector<InputTraceRow> trace;
    if (!input.empty()) trace = read_input_trace(input);
    Session session = make_session(cfg, assets);
    PacingStats stats;
    std::cerr << "headless session: " << cfg.session.ticks << " ticks at " << cfg.session.tick_ms << " ms\n";
    const auto records = run_paced(session, cfg.session.ticks, cfg.session.tick_ms, trace_input(trace), {}, &stats,
                                   [] { return g_interrupted != 0; });
    if (log.empty()) log = default_log(cfg, "headless.csv");
    write_session_artifacts(log, cfg, assets, records, &stats, "headless");
    std::cerr << "wrote " << log << " (" << records.size() << " rows, " << stats.duration_ms / 1000.0
              << " s, p95 jitter " << stats.p95_jitter_ms << " ms)\n";
    return static_cast<int>(records.size()) == cfg.session.ticks ? kOk : kFailed;
  }
  Server server(cfg, assets);
  const int bound = server.bind();
  std::cerr << "listening on " << cfg.service.host << ":" << bound << "\n";
  g_server = &server;
  server.run(clients);
  g_server = nullptr;
  for (const auto& l : server.written_logs()) std::cerr << "wrote " << l << "\n";
  return kOk;
}

int cmd_replay(RunConfig cfg, const std::string& input, std::optional<int> ticks, std::string log) {
  const auto assets = load_assets(cfg, false);
  const auto trace = read_input_trace(input);
  std::vector<int> epochs;
  const bool from_log = csv::read_table(input).header == session_log_header();
  if (from_log) {
    for (const auto& r : read_session_log(input)) epochs.push_back(r.inference_epochs_run);
    if (!ticks) ticks = static_cast<int>(epochs.size());
  }
  if (ticks) cfg.session.ticks = *ticks;
  cfg.validate();
  Session session = make_session(cfg, assets);
  const auto records = run_virtual(session, cfg.session.ticks, cfg.session.tick_ms, trace_input(trace),
                                   from_log ? &epochs : nullptr);
  if (log.empty()) log = default_log(cfg, "replay.csv");
  write_session_artifacts(log, cfg, assets, records, nullptr, "replay");
  std::cerr << "wrote " << log << " (" << records.size() << " rows)\n";
  return kOk;
}

int cmd_confusion(const RunConfig& cfg, const std::string& out) {
  const auto model = load_model(cfg.paths.model);
  const auto obs = load_observer(cfg.paths.observer);
  auto data_opt = cfg.observer.data;
  data_opt.warmup_steps = cfg.training.options.warmup_steps;
  data_opt.noise_sigma = cfg.observer.test_noise;
  data_opt.seed = cfg.observer.data.seed + 1;
  const auto test = observer_dataset(model.params, model.network, model.windows, data_opt);
  const Mat conf = confusion_matrix(obs.net, test);
  ensure_parent(out);
  csv::Writer w(out);
  std::vector<std::string> header = {"true"};
  header.insert(header.end(), obs.labels.begin(), obs.labels.end());
  w.row(header);
  double worst = 1.0;
  for (Eigen::Index r = 0; r < conf.rows(); ++r) {
    std::vector<std::string> row = {obs.labels[static_cast<std::size_t>(r)]};
    for (Eigen::Index c = 0; c < conf.cols(); ++c) row.push_back(csv::format_double(conf(r, c)));
    w.row(row);
    worst = std::min(worst, conf(r, r));
  }
  std::cerr << "wrote " << out << " (min diagonal " << worst << ")\n";
  return kOk;
}

int cmd_congruence(const RunConfig& cfg, const std::string& log_path, const std::string& out_dir) {
  const auto obs = load_observer(cfg.paths.observer);
  const auto log = read_session_log(log_path);
  const auto rows = session_congruence(log, obs.net, cfg.observer.congruence_window, cfg.observer.event_gap);
  fs::create_directories(out_dir);
  const auto all = (fs::path(out_dir) / "congruence.csv").string();
  csv::Writer w(all);
  w.row({"t", "event", "c", "P"});
  std::map<int, std::unique_ptr<csv::Writer>> per_event;
  for (const auto& r : rows) {
    const std::vector<std::string> row = {std::to_string(r.t), std::to_string(r.event), std::to_string(r.c),
                                          csv::format_double(r.p)};
    w.row(row);
    auto& ew = per_event[r.event];
    if (!ew) {
      ew = std::make_unique<csv::Writer>((fs::path(out_dir) / ("event_" + std::to_string(r.event) + ".csv")).string());
      ew->row({"t", "event", "c", "P"});
    }
    ew->row(row);
  }
  std::cerr << "wrote " << all << " (" << rows.size() << " rows, " << per_event.size() << " events)\n";
  return kOk;
}

int cmd_pca(const RunConfig& cfg, int steps, const std::string& out) {
  const auto model = load_model(cfg.paths.model);
  const auto traces = top_layer_traces(model, steps, cfg.training.options.warmup_steps);
  Mat all(static_cast<Eigen::Index>(traces.size()) * steps, traces.front().states.cols());
  for (std::size_t i = 0; i < traces.size(); ++i) all.middleRows(static_cast<Eigen::Index>(i) * steps, steps) = traces[i].states;
  const auto p = pca(all, 2);
  ensure_parent(out);
  csv::Writer w(out);
  w.row({"step", "primitive", "pc1", "pc2"});
  for (std::size_t i = 0; i < traces.size(); ++i)
    for (int t = 0; t < steps; ++t) {
      const auto row = static_cast<Eigen::Index>(i) * steps + t;
      w.row({std::to_string(t + 1), traces[i].label, csv::format_double(p.projection(row, 0)),
             csv::format_double(p.projection(row, 1))});
    }
  std::cerr << "wrote " << out << " (explained variance " << p.explained_variance[0] / p.total_variance << ", "
            << p.explained_variance[1] / p.total_variance << ")\n";
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, int steps) {
  const auto cfg = tiny_gradcheck_config();
  const auto prob = random_gradcheck_problem(cfg, steps, seed);
  const auto rep = gradient_check(prob.targets, prob.record, prob.params, prob.window, cfg, GradCheckOptions{});
  std::cout << "checked " << rep.checked << " gradient entries, " << rep.failures.size() << " failures, max abs error "
            << rep.max_abs_error << ", max rel error " << rep.max_rel_error << "\n";
  for (const auto& f : rep.failures)
    std::cout << "  FAIL " << f.tensor << "[" << f.index << "] analytic " << f.analytic << " numeric " << f.numeric << "\n";
  return rep.passed() ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PV-RNN deliberation-control toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("-c,--config", config_path, "Run config JSON (default: $PVRNN_CONFIG, then configs/default.json)");
  app.add_option("--seed", seed, "Override the config seed");

  auto* train = app.add_subcommand("train", "Train the network on the primitive set, then the observer");
  std::optional<int> train_epochs;
  bool no_observer = false, observer_only = false;
  std::string report;
  train->add_option("--epochs", train_epochs, "Epochs (default: training.epochs)");
  train->add_flag("--no-observer", no_observer, "Skip observer training");
  train->add_flag("--observer-only", observer_only, "Train only the observer on the saved model");
  train->add_option("--report", report, "Training report CSV (default: next to the model)");

  auto* gen = app.add_subcommand("generate", "Prior generation of one primitive as CSV t,x,y");
  int gen_steps = 72;
  std::string gen_prim, gen_eps = "zeros", gen_out;
  gen->add_option("--steps", gen_steps, "Steps to generate")->check(CLI::PositiveNumber);
  gen->add_option("--primitive", gen_prim, "Primitive label")->required();
  gen->add_option("--eps", gen_eps, "Noise mode")->check(CLI::IsMember({"zeros", "sampled"}));
  gen->add_option("-o,--out", gen_out, "Output CSV (default: stdout)");

  auto* serve = app.add_subcommand("serve", "Run the session service, or one headless session");
  bool headless = false;
  std::string serve_input, serve_log;
  std::optional<int> serve_ticks, serve_port;
  int serve_clients = 0;
  serve->add_flag("--headless", headless, "Run one paced session without clients");
  serve->add_option("--input", serve_input, "Input trace CSV (t,x,y,active) for --headless");
  serve->add_option("--ticks", serve_ticks, "Session length (default: session.ticks)");
  serve->add_option("--log", serve_log, "Session log path for --headless");
  serve->add_option("--port", serve_port, "Listening port (default: service.port)");
  serve->add_option("--clients", serve_clients, "Exit after this many sessions (0: run until interrupted)");

  auto* replay = app.add_subcommand("replay", "Deterministic virtual-time session from an input trace or session log");
  std::string replay_input, replay_log;
  std::optional<int> replay_ticks;
  replay->add_option("--input", replay_input, "Input trace CSV or recorded session log")->required()->check(CLI::ExistingFile);
  replay->add_option("--ticks", replay_ticks, "Session length (default: trace length or session.ticks)");
  replay->add_option("--log", replay_log, "Output session log");

  auto* analyze = app.add_subcommand("analyze", "Observer and latent-space analysis");
  analyze->require_subcommand(1);
  auto* confusion = analyze->add_subcommand("confusion", "Confusion matrix on noise-perturbed prior generations");
  std::string conf_out = "runs/analysis/confusion.csv";
  confusion->add_option("-o,--out", conf_out, "Output CSV");
  auto* congr = analyze->add_subcommand("congruence", "Per-event intention congruence of a session log");
  std::string congr_log, congr_out = "runs/analysis/congruence";
  congr->add_option("--log", congr_log, "Session log CSV")->required()->check(CLI::ExistingFile);
  congr->add_option("-o,--out-dir", congr_out, "Output directory");
  auto* pca_cmd = analyze->add_subcommand("pca", "2-component PCA of the top-layer d states");
  int pca_steps = 72;
  std::string pca_out = "runs/analysis/pca.csv";
  pca_cmd->add_option("--steps", pca_steps, "Steps per primitive")->check(CLI::PositiveNumber);
  pca_cmd->add_option("-o,--out", pca_out, "Output CSV");

  auto* gc = app.add_subcommand("gradcheck", "Compare BPTT gradients with central finite differences");
  std::uint64_t gc_seed = 1;
  int gc_steps = 4;
  gc->add_option("--gc-seed", gc_seed, "Seed of the random tiny network");
  gc->add_option("--steps", gc_steps, "Sequence length")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_steps);
    const RunConfig cfg = resolve_config(config_path, seed);
    if (train->parsed()) return cmd_train(cfg, train_epochs, no_observer, observer_only, report);
    if (gen->parsed()) return cmd_generate(cfg, gen_steps, gen_prim, gen_eps, gen_out);
    if (serve->parsed()) return cmd_serve(cfg, headless, serve_input, serve_ticks, serve_log, serve_clients, serve_port);
    if (replay->parsed()) return cmd_replay(cfg, replay_input, replay_ticks, replay_log);
    if (confusion->parsed()) return cmd_confusion(cfg, conf_out);
    if (congr->parsed()) return cmd_congruence(cfg, congr_log, congr_out);
    if (pca_cmd->parsed()) return cmd_pca(cfg, pca_steps, pca_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
