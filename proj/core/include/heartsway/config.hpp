#pragma once

// Engine configuration: one key = value file, then HEARTSWAY_* environment
// overrides (filter.window -> HEARTSWAY_FILTER_WINDOW).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heartsway/device.hpp"
#include "heartsway/replay.hpp"
#include "heartsway/signal.hpp"

namespace heartsway {

struct EngineConfig {
  signal::FilterParams filter;
  signal::PeltParams pelt;
  std::size_t page_size = replay::kDefaultPageSize;
  TimeMs stretch_period_ms = 1000;
  replay::VibrationPulse vibration;
  device::PresenceParams presence;

  bool woz_mode = false;
  TimeMs woz_lead_ms = 3000;
  TimeMs woz_late_tolerance_ms = 1000;
  TimeMs rejoin_grace_ms = 10000;
  TimeMs max_session_ms = 60 * 60 * 1000;
  TimeMs swing_stroke_ms = 1500;

  std::string data_dir;  // required
  std::string device = "sim";  // "sim" or a serial device path
  int baud = 115200;
  std::string bind = "127.0.0.1:8787";
  std::string seed_trace;  // optional; JSON or CSV schedule
  std::string scenario;    // occupant script for the sim device; empty = override-driven

  /// Throws Error(ConfigInvalid) listing every offending field, one per line.
  void validate() const;

  std::string host() const;
  int port() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Process environment.
std::optional<std::string> system_env(const std::string& name);

/// Environment variable that overrides `key`.
std::string env_name(const std::string& key);

/// Parses a config document on top of the defaults and applies environment
/// overrides. Unknown or malformed keys are ConfigInvalid; call validate()
/// once any command-line overrides are in.
EngineConfig parse_config(const std::string& text, const EnvLookup& env = system_env);
/// Defaults plus environment when `path` is empty.
EngineConfig load_config(const std::string& path, const EnvLookup& env = system_env);

/// key = value rendering, loadable by parse_config.
std::string render_config(const EngineConfig& config);

/// Every key, in rendering order.
std::vector<std::string> config_keys();

}  // namespace heartsway
