// heartsway: operator entry point.
//
// exit codes: 0 ok, 2 config error, 3 device error, 4 data error

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "heartsway/analysis.hpp"
#include "heartsway/api.hpp"
#include "heartsway/config.hpp"
#include "heartsway/engine.hpp"
#include "heartsway/link.hpp"
#include "heartsway/serial_backend.hpp"
#include "heartsway/simulation.hpp"
#include "heartsway/tracestore.hpp"

namespace fs = std::filesystem;
using namespace heartsway;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDeviceError = 3;
constexpr int kDataError = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::InvalidParams:
    case ErrorCode::InvalidScript:
      return kConfigError;
    case ErrorCode::DeviceOpenFailed:
    case ErrorCode::BackendClosed:
    case ErrorCode::Timeout:
    case ErrorCode::NackReceived:
    case ErrorCode::LinkClosed:
      return kDeviceError;
    default:
      return kDataError;
  }
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << body;
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Overrides {
  std::string config_path;
  bool sim = false;
  bool woz = false;
  std::string seed_trace;
  std::string bind;
  std::string data_dir;
  std::string scenario;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "config file (key = value)");
  cmd->add_option("--data-dir", o.data_dir, "trace store directory (overrides data_dir)");
}

void add_engine_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_flag("--woz", o.woz, "Wizard-of-Oz: cue an operator instead of driving the swing actuator");
  cmd->add_option("--seed-trace", o.seed_trace, "schedule (JSON or CSV) for the very first occupant");
}

EngineConfig effective_config(const Overrides& o) {
  auto config = load_config(o.config_path);
  if (o.sim) config.device = "sim";
  if (o.woz) config.woz_mode = true;
  if (!o.seed_trace.empty()) config.seed_trace = o.seed_trace;
  if (!o.bind.empty()) config.bind = o.bind;
  if (!o.data_dir.empty()) config.data_dir = o.data_dir;
  if (!o.scenario.empty()) config.scenario = o.scenario;
  config.validate();
  return config;
}

void log_events_to(std::ostream& out, EventBus& bus) {
  bus.set_sink([&out](const ApiEvent& e) { out << to_json(e) << '\n' << std::flush; });
}

void report_recovery(const store::TraceStore& store) {
  const auto& r = store.recovery();
  if (r.closed) {
    std::cerr << "recovered interrupted session " << r.closed->id.value << ", closed at its last sample\n";
  }
  if (r.discarded) std::cerr << "discarded empty interrupted session " << r.discarded->value << '\n';
}

int cmd_run(const Overrides& o) {
  // Signals are taken by a dedicated thread; block them everywhere else.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const auto config = effective_config(o);
  store::TraceStore store(config.data_dir);
  report_recovery(store);

  SystemClock clock;
  std::unique_ptr<device::Backend> backend;
  TimeMs scenario_end = 0;
  if (config.device == "sim") {
    device::Scenario scenario;
    if (!config.scenario.empty()) {
      scenario = device::load_scenario(config.scenario);
      // scenario times are relative to daemon start
      const TimeMs start = clock.now_ms();
      for (auto& v : scenario.visits) v.arrive_at += start;
      scenario_end = scenario.end_time();
    }
    device::SimOptions sim;
    sim.stretch_period_ms = config.stretch_period_ms;
    sim.swing_stroke_ms = config.swing_stroke_ms;
    auto b = std::make_unique<device::SimulatedBackend>(std::move(scenario), sim);
    b->set_log_distance(false);
    backend = std::move(b);
  } else {
    const int fd = wire::open_serial_port(config.device, config.baud);
    device::SerialOptions so;
    so.swing_stroke_ms = config.swing_stroke_ms;
    backend = std::make_unique<device::SerialBackend>(std::make_unique<wire::FdLink>(fd), clock, so);
  }

  EventBus bus;
  log_events_to(std::cerr, bus);
  session::Engine engine(config, *backend, store, clock, bus);

  api::ApiOptions ao;
  ao.host = config.host();
  ao.port = config.port();
  api::ApiServer server(&engine, bus, ao);
  try {
    server.start();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDeviceError;
  }
  std::cerr << "listening on http://" << ao.host << ':' << server.port() << '\n';

  std::jthread loop([&](std::stop_token st) { engine.run_realtime(st); });
  std::jthread waiter([&](std::stop_token st) {
    while (!st.stop_requested()) {
      if (scenario_end && clock.now_ms() >= scenario_end) break;
      timespec ts{0, 200 * 1000 * 1000};
      siginfo_t info;
      if (sigtimedwait(&signals, &info, &ts) > 0) break;
      if (engine.stop_requested()) return;
    }
    engine.request_stop();
  });
  loop.join();
  waiter.request_stop();
  waiter.join();

  engine.shutdown();
  server.stop();
  backend->close();
  std::cerr << "stopped\n";
  return kOk;
}

int cmd_simulate(const Overrides& o, const std::string& io_log, const std::string& events_out, bool quiet) {
  auto config = effective_config(Overrides{o.config_path, true, o.woz, o.seed_trace, "", o.data_dir, o.scenario});
  if (config.scenario.empty()) throw Error(ErrorCode::ConfigInvalid, "sim.scenario (or --scenario) is required");
  const auto scenario = device::load_scenario(config.scenario);

  store::TraceStore store(config.data_dir);
  report_recovery(store);
  VirtualClock clock(0);
  device::SimOptions sim;
  sim.stretch_period_ms = config.stretch_period_ms;
  sim.swing_stroke_ms = config.swing_stroke_ms;
  device::SimulatedBackend backend(scenario, sim);

  EventBus bus(1u << 20);
  std::ofstream events_file;
  if (!events_out.empty()) {
    events_file.open(events_out);
    if (!events_file) throw Error(ErrorCode::Io, "cannot write " + events_out);
    log_events_to(events_file, bus);
  } else if (!quiet) {
    log_events_to(std::cout, bus);
  }

  session::Engine engine(config, backend, store, clock, bus);
  engine.run_virtual(clock, scenario.end_time());
  engine.shutdown();
  bus.set_sink({});

  if (!io_log.empty()) write_file(io_log, backend.io_log_csv());

  const auto snap = engine.snapshot();
  std::cerr << "simulated " << replay::format_clock(scenario.end_time()) << ", " << snap.sessions_completed
            << " sessions; retained:";
  for (const auto& id : store.retained_sessions()) std::cerr << ' ' << id.value;
  std::cerr << '\n';
  return kOk;
}

int cmd_analyze(const Overrides& o, const std::string& input, std::string out_dir,
                std::optional<std::size_t> window, std::optional<double> k_sigma, std::optional<double> penalty,
                std::optional<double> bandwidth) {
  EngineConfig config = o.config_path.empty() ? EngineConfig{} : load_config(o.config_path);
  if (window) config.filter.window = *window;
  if (k_sigma) config.filter.k_sigma = *k_sigma;
  if (penalty) config.pelt.penalty = *penalty;
  if (bandwidth) config.pelt.kernel_bandwidth = *bandwidth;
  try {
    config.filter.validate();
    config.pelt.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }

  const auto series = analysis::parse_series_csv(read_file(input));
  const auto result = analysis::analyze_series(series, config.filter, config.pelt);

  const fs::path in(input);
  const fs::path dir = out_dir.empty() ? in.parent_path() : fs::path(out_dir);
  if (!dir.empty()) fs::create_directories(dir);
  const auto stem = in.stem().string();
  write_file(dir / (stem + ".changepoints.csv"), analysis::changepoints_csv(result));
  write_file(dir / (stem + ".filtered.csv"), analysis::filtered_csv(result));
  write_file(dir / (stem + ".cues.txt"), replay::cue_sheet(result.schedule));

  for (const auto& m : result.changepoints) std::cout << m.t << '\n';
  std::cerr << series.size() << " samples, " << result.removed << " removed as outliers, "
            << result.changepoints.size() << " changepoints\n";
  return kOk;
}

int cmd_export(const Overrides& o, const std::string& selector, const std::string& out_dir, bool schedule) {
  EngineConfig config = o.config_path.empty() ? EngineConfig{} : load_config(o.config_path);
  if (!o.data_dir.empty()) config.data_dir = o.data_dir;
  if (config.data_dir.empty()) throw Error(ErrorCode::ConfigInvalid, "data_dir is required");

  store::TraceStore store(config.data_dir);
  const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  fs::create_directories(dir);

  if (schedule) {
    const auto trace = store.peek_prepared();
    if (!trace) throw Error(ErrorCode::SessionNotFound, "no prepared trace");
    write_file(dir / "schedule.csv", replay::to_csv(trace->schedule));
    write_file(dir / "cues.txt", replay::cue_sheet(trace->schedule));
    std::cout << (dir / "schedule.csv").string() << '\n' << (dir / "cues.txt").string() << '\n';
    return kOk;
  }

  SessionId id{selector};
  if (selector == "live" || selector == "predecessor") {
    const auto found = selector == "live" ? store.live_session() : store.predecessor();
    if (!found) throw Error(ErrorCode::SessionNotFound, "no " + selector + " session");
    id = *found;
  }
  const auto record = store.load(id);
  const auto bpm_path = dir / (id.value + ".bpm.csv");
  const auto stretch_path = dir / (id.value + ".stretch.csv");
  write_file(bpm_path, store::bpm_csv(record));
  write_file(stretch_path, store::stretch_csv(record));
  std::cout << bpm_path.string() << '\n' << stretch_path.string() << '\n';
  return kOk;
}

int cmd_config(const Overrides& o, bool defaults) {
  if (defaults) {
    std::cout << render_config(EngineConfig{});
    return kOk;
  }
  const auto config = effective_config(o);
  std::cout << render_config(config);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heartsway: record one occupant, replay them to the next"};
  app.require_subcommand(1);
  Overrides o;

  auto* run = app.add_subcommand("run", "run the daemon");
  add_common(run, o);
  add_engine_flags(run, o);
  run->add_flag("--sim", o.sim, "use the simulated device backend");
  run->add_option("--bind", o.bind, "API address host:port (default 127.0.0.1:8787)");
  run->add_option("--scenario", o.scenario, "occupant script for the simulated backend");

  std::string io_log, events_out;
  bool quiet = false;
  auto* simulate = app.add_subcommand("simulate", "run an occupant script in virtual time");
  add_common(simulate, o);
  add_engine_flags(simulate, o);
  simulate->add_flag("--sim", o.sim, "accepted for symmetry with run; simulate always uses the sim backend");
  simulate->add_option("--scenario", o.scenario, "occupant script");
  simulate->add_option("--io-log", io_log, "write the backend I/O log (t_ms,channel,detail)");
  simulate->add_option("--events", events_out, "write engine events (one JSON document per line)");
  simulate->add_flag("-q,--quiet", quiet, "do not print events");

  std::string input, out_dir;
  std::optional<std::size_t> window;
  std::optional<double> k_sigma, penalty, bandwidth;
  auto* analyze = app.add_subcommand("analyze", "changepoints of a t_ms,value CSV");
  analyze->add_option("input", input, "series CSV")->required();
  analyze->add_option("--config", o.config_path, "config file providing filter and pelt parameters");
  analyze->add_option("-o,--out-dir", out_dir, "output directory (default: next to the input)");
  analyze->add_option("--window", window, "outlier filter window");
  analyze->add_option("--k-sigma", k_sigma, "outlier threshold in standard deviations");
  analyze->add_option("--penalty", penalty, "PELT penalty per changepoint");
  analyze->add_option("--bandwidth", bandwidth, "RBF bandwidth (default: median heuristic)");

  std::string selector;
  bool schedule = false;
  auto* exp = app.add_subcommand("export", "write a retained session as CSV");
  add_common(exp, o);
  exp->add_option("session", selector, "session id, 'live' or 'predecessor'");
  exp->add_option("-o,--out-dir", out_dir, "output directory (default: .)");
  exp->add_flag("--schedule", schedule, "export the prepared schedule and cue sheet instead");

  bool defaults = false;
  auto* cfg = app.add_subcommand("config", "inspect configuration");
  cfg->require_subcommand(1);
  auto* print = cfg->add_subcommand("print-defaults", "print every default");
  auto* check = cfg->add_subcommand("check", "validate and print the effective config");
  add_common(check, o);
  print->callback([&] { defaults = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*run) return cmd_run(o);
    if (*simulate) return cmd_simulate(o, io_log, events_out, quiet);
    if (*analyze) return cmd_analyze(o, input, out_dir, window, k_sigma, penalty, bandwidth);
    if (*exp) {
      if (selector.empty() && !schedule) {
        std::cerr << "error: export needs a session or --schedule\n";
        return kConfigError;
      }
      return cmd_export(o, selector, out_dir, schedule);
    }
    if (*cfg) return cmd_config(o, defaults || !*check);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}
