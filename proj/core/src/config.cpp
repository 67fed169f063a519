#include "heartsway/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "heartsway/error.hpp"
#include "heartsway/kv.hpp"

namespace heartsway {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  // 3.00 -> 3, 0.40 stays 0.40 so the duty reads like a percentage
  if (s.size() > 3 && s.compare(s.size() - 3, 3, ".00") == 0) s.resize(s.size() - 3);
  return s;
}

struct Field {
  const char* key;
  std::function<std::string(const EngineConfig&)> get;
  std::function<void(EngineConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field int_field(const char* key, T EngineConfig::*member) {
  return {key, [member](const EngineConfig& c) { return std::to_string(c.*member); },
          [member](EngineConfig& c, const std::string& v, const std::string& what) {
            const auto n = kv::to_int(v, what);
            if constexpr (std::is_unsigned_v<T>) {
              if (n < 0) throw Error(ErrorCode::ParseError, what + ": must be >= 0");
            }
            c.*member = static_cast<T>(n);
          }};
}

Field string_field(const char* key, std::string EngineConfig::*member) {
  return {key, [member](const EngineConfig& c) { return c.*member; },
          [member](EngineConfig& c, const std::string& v, const std::string&) { c.*member = v; }};
}

std::size_t to_size(const std::string& v, const std::string& what) {
  const auto n = kv::to_int(v, what);
  if (n < 0) throw Error(ErrorCode::ParseError, what + ": must be >= 0");
  return static_cast<std::size_t>(n);
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"filter.window", [](const EngineConfig& c) { return std::to_string(c.filter.window); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.filter.window = to_size(v, w); }},
      {"filter.k_sigma", [](const EngineConfig& c) { return fmt_double(c.filter.k_sigma); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.filter.k_sigma = kv::to_double(v, w); }},
      {"filter.min_window", [](const EngineConfig& c) { return std::to_string(c.filter.min_window); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.filter.min_window = to_size(v, w); }},
      {"pelt.penalty", [](const EngineConfig& c) { return fmt_double(c.pelt.penalty); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.pelt.penalty = kv::to_double(v, w); }},
      {"pelt.kernel_bandwidth",
       [](const EngineConfig& c) { return c.pelt.kernel_bandwidth ? fmt_double(*c.pelt.kernel_bandwidth) : "auto"; },
       [](EngineConfig& c, const std::string& v, const std::string& w) {
         if (v == "auto" || v.empty()) {
           c.pelt.kernel_bandwidth.reset();
         } else {
           c.pelt.kernel_bandwidth = kv::to_double(v, w);
         }
       }},
      {"replay.page_size", [](const EngineConfig& c) { return std::to_string(c.page_size); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.page_size = to_size(v, w); }},
      int_field("sensors.stretch_period_ms", &EngineConfig::stretch_period_ms),
      {"vibration.strength", [](const EngineConfig& c) { return fmt_double(c.vibration.strength); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.vibration.strength = kv::to_double(v, w); }},
      {"vibration.duration_ms", [](const EngineConfig& c) { return std::to_string(c.vibration.duration_ms); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.vibration.duration_ms = kv::to_int(v, w); }},
      {"vibration.motor_rated_rpm", [](const EngineConfig& c) { return std::to_string(c.vibration.motor_rated_rpm); },
       [](EngineConfig& c, const std::string& v, const std::string& w) {
         c.vibration.motor_rated_rpm = static_cast<int>(kv::to_int(v, w));
       }},
      {"presence.threshold_cm", [](const EngineConfig& c) { return fmt_double(c.presence.threshold_cm); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.presence.threshold_cm = kv::to_double(v, w); }},
      {"presence.debounce_count", [](const EngineConfig& c) { return std::to_string(c.presence.debounce_count); },
       [](EngineConfig& c, const std::string& v, const std::string& w) {
         c.presence.debounce_count = static_cast<int>(kv::to_int(v, w));
       }},
      {"presence.poll_period_ms", [](const EngineConfig& c) { return std::to_string(c.presence.poll_period_ms); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.presence.poll_period_ms = kv::to_int(v, w); }},
      {"session.woz_mode", [](const EngineConfig& c) { return std::string(c.woz_mode ? "true" : "false"); },
       [](EngineConfig& c, const std::string& v, const std::string& w) { c.woz_mode = kv::to_bool(v, w); }},
      int_field("session.woz_lead_ms", &EngineConfig::woz_lead_ms),
      int_field("session.woz_late_tolerance_ms", &EngineConfig::woz_late_tolerance_ms),
      int_field("session.rejoin_grace_ms", &EngineConfig::rejoin_grace_ms),
      int_field("session.max_session_ms", &EngineConfig::max_session_ms),
      int_field("actuator.swing_stroke_ms", &EngineConfig::swing_stroke_ms),
      string_field("data_dir", &EngineConfig::data_dir),
      string_field("device", &EngineConfig::device),
      int_field("serial.baud", &EngineConfig::baud),
      string_field("api.bind", &EngineConfig::bind),
      string_field("seed_trace", &EngineConfig::seed_trace),
      string_field("sim.scenario", &EngineConfig::scenario),
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

}  // namespace

std::optional<std::string> system_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

std::string env_name(const std::string& key) {
  std::string out = "HEARTSWAY_";
  for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

std::string EngineConfig::host() const {
  const auto colon = bind.rfind(':');
  return colon == std::string::npos ? bind : bind.substr(0, colon);
}

int EngineConfig::port() const {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) return 8787;
  return static_cast<int>(kv::to_int(bind.substr(colon + 1), "api.bind"));
}

void EngineConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](const auto& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.emplace_back(e.what());
    }
  };
  check([&] { filter.validate(); });
  check([&] { pelt.validate(); });
  check([&] { presence.validate(); });
  check([&] { vibration.validate(); });
  if (page_size == 0 || page_size > 30) problems.emplace_back("replay.page_size must be within 1..30");
  if (stretch_period_ms <= 0) problems.emplace_back("sensors.stretch_period_ms must be > 0");
  if (woz_lead_ms < 0) problems.emplace_back("session.woz_lead_ms must be >= 0");
  if (woz_late_tolerance_ms < 0) problems.emplace_back("session.woz_late_tolerance_ms must be >= 0");
  if (rejoin_grace_ms < 0) problems.emplace_back("session.rejoin_grace_ms must be >= 0");
  if (max_session_ms <= 0) problems.emplace_back("session.max_session_ms must be > 0");
  if (swing_stroke_ms < 0) problems.emplace_back("actuator.swing_stroke_ms must be >= 0");
  if (data_dir.empty()) problems.emplace_back("data_dir is required");
  if (device.empty()) problems.emplace_back("device must be \"sim\" or a serial device path");
  if (baud <= 0) problems.emplace_back("serial.baud must be > 0");
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    problems.emplace_back("api.bind must be host:port");
  } else {
    check([&] {
      const int p = port();
      if (p < 0 || p > 65535) throw Error(ErrorCode::ConfigInvalid, "api.bind port must be within 0..65535");
    });
  }
  if (problems.empty()) return;
  std::string msg;
  for (const auto& p : problems) {
    if (!msg.empty()) msg += '\n';
    msg += p;
  }
  throw Error(ErrorCode::ConfigInvalid, msg);
}

EngineConfig parse_config(const std::string& text, const EnvLookup& env) {
  EngineConfig config;
  std::vector<std::string> problems;
  kv::Document doc;
  try {
    doc = kv::parse(text);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  for (const auto& section : doc.sections) {
    for (const auto& entry : section.entries) {
      const std::string key = section.name.empty() ? entry.key : section.name + "." + entry.key;
      const std::string what = "line " + std::to_string(entry.line) + ": " + key;
      const auto* field = find_field(key);
      if (!field) {
        problems.push_back(what + ": unknown field");
        continue;
      }
      try {
        field->set(config, entry.value, what);
      } catch (const Error& e) {
        problems.emplace_back(e.what());
      }
    }
  }
  if (env) {
    for (const auto& f : fields()) {
      const auto name = env_name(f.key);
      if (auto v = env(name)) {
        try {
          f.set(config, *v, name);
        } catch (const Error& e) {
          problems.emplace_back(e.what());
        }
      }
    }
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "\n") + p;
    throw Error(ErrorCode::ConfigInvalid, msg);
  }
  return config;
}

EngineConfig load_config(const std::string& path, const EnvLookup& env) {
  if (path.empty()) return parse_config("", env);
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), env);
}

std::string render_config(const EngineConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(config);
    out += '\n';
  }
  return out;
}

}  // namespace heartsway
