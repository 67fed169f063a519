#include "heartsway/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "heartsway/error.hpp"
#include "heartsway/signal.hpp"
#include "heartsway/wire.hpp"

namespace heartsway::device {

namespace {

constexpr double kSimMinBpm = 25.0;
constexpr double kSimMaxBpm = 240.0;

// Independent streams per occupant: the stretch and pulse sequences do not
// shift when the other stream is read more or less often.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

double gaussian(std::mt19937_64& rng, double sd) {
  if (sd <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sd)(rng);
}

}  // namespace

void OccupantScript::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidScript, what); };
  if (duration_ms <= 0) fail("duration_ms must be > 0");
  if (!(bpm.baseline > signal::kMinValidBpm && bpm.baseline < signal::kMaxValidBpm)) {
    fail("bpm.baseline must be within (20, 250)");
  }
  if (bpm.noise_sd < 0.0 || stretch.noise_sd < 0.0) fail("noise_sd must be >= 0");
  if (stretch.baseline < 0.0) fail("stretch.baseline must be >= 0");
  if (stretch.baseline + stretch.step < 0.0) fail("stretch.step would drive the reading negative");
  for (auto m : movement_times_ms) {
    if (m < 0 || m >= duration_ms) fail("movement at " + std::to_string(m) + " ms is outside the visit");
  }
  if (!std::is_sorted(movement_times_ms.begin(), movement_times_ms.end())) fail("movements_ms must be sorted");
  for (const auto& g : presence_gaps) {
    if (g.start_ms < 0 || g.length_ms <= 0 || g.start_ms + g.length_ms > duration_ms) {
      fail("presence gap outside the visit");
    }
  }
}

OccupantGenerator::OccupantGenerator(OccupantScript script, std::uint64_t seed, TimeMs arrive_at)
    : script_(std::move(script)),
      arrive_at_(arrive_at),
      stretch_rng_(stream_seed(seed, 1)),
      bpm_rng_(stream_seed(seed, 2)) {
  script_.validate();
}

bool OccupantGenerator::present(TimeMs t) const noexcept {
  if (t < arrive_at_ || t >= departs_at()) return false;
  const TimeMs rel = t - arrive_at_;
  for (const auto& g : script_.presence_gaps) {
    if (rel >= g.start_ms && rel < g.start_ms + g.length_ms) return false;
  }
  return true;
}

double OccupantGenerator::stretch_at(TimeMs t) {
  const TimeMs rel = t - arrive_at_;
  const auto& moves = script_.movement_times_ms;
  const auto toggles = std::upper_bound(moves.begin(), moves.end(), rel) - moves.begin();
  const double level = script_.stretch.baseline + (toggles % 2 ? script_.stretch.step : 0.0);
  return std::max(0.0, level + gaussian(stretch_rng_, script_.stretch.noise_sd));
}

double OccupantGenerator::bpm_at(TimeMs t) {
  const double minutes = static_cast<double>(t - arrive_at_) / 60000.0;
  const double bpm = script_.bpm.baseline + script_.bpm.drift_per_min * minutes +
                     gaussian(bpm_rng_, script_.bpm.noise_sd);
  return std::clamp(bpm, kSimMinBpm, kSimMaxBpm);
}

SimulatedStreams simulate_occupant(const OccupantScript& script, std::uint64_t seed, TimeMs poll_period_ms,
                                   const SimOptions& options) {
  if (poll_period_ms <= 0) throw Error(ErrorCode::InvalidScript, "poll period must be > 0");
  Scenario scenario;
  scenario.visits.push_back({0, seed, script});
  scenario.tail_ms = 0;
  SimulatedBackend backend(std::move(scenario), options);

  SimulatedStreams out;
  backend.start_sensors(0);
  for (TimeMs t = 0; t < script.duration_ms; t += poll_period_ms) {
    out.distance.emplace_back(t, backend.read_distance_cm(t));
  }
  const TimeMs last = script.duration_ms - 1;
  out.bpm = backend.read_pulse(last);
  out.stretch = backend.read_stretch(last);
  return out;
}

void Scenario::validate() const {
  if (visits.empty()) throw Error(ErrorCode::InvalidScript, "scenario has no occupants");
  for (std::size_t i = 0; i < visits.size(); ++i) {
    visits[i].script.validate();
    if (visits[i].arrive_at < 0) throw Error(ErrorCode::InvalidScript, "arrival before time zero");
    if (i > 0 && visits[i].arrive_at < visits[i - 1].arrive_at + visits[i - 1].script.duration_ms) {
      throw Error(ErrorCode::InvalidScript, "occupant " + std::to_string(i + 1) + " arrives before the previous one leaves");
    }
  }
  if (tail_ms < 0) throw Error(ErrorCode::InvalidScript, "tail_ms must be >= 0");
}

TimeMs Scenario::end_time() const {
  TimeMs end = 0;
  for (const auto& v : visits) end = std::max(end, v.arrive_at + v.script.duration_ms);
  return end + tail_ms;
}

Scenario parse_scenario(const kv::Document& doc) {
  Scenario scenario;
  scenario.tail_ms = doc.root().get_int("tail_ms", scenario.tail_ms);
  static const std::vector<std::string> known = {
      "arrive_ms",     "gap_before_ms",   "duration_ms",  "seed",          "bpm.baseline",
      "bpm.drift_per_min", "bpm.noise_sd", "stretch.baseline", "stretch.step", "stretch.noise_sd",
      "movements_ms",  "presence_gaps"};

  TimeMs previous_end = 0;
  std::uint64_t index = 0;
  for (const auto* section : doc.named("occupant")) {
    ++index;
    if (auto unknown = section->unknown_keys(known); !unknown.empty()) {
      throw Error(ErrorCode::InvalidScript,
                  "line " + std::to_string(unknown.front().line) + ": unknown key '" + unknown.front().key + "'");
    }
    Visit v;
    if (section->has("arrive_ms")) {
      v.arrive_at = section->get_int("arrive_ms", 0);
    } else {
      v.arrive_at = previous_end + section->get_int("gap_before_ms", index == 1 ? 1000 : 30000);
    }
    v.seed = static_cast<std::uint64_t>(section->get_int("seed", static_cast<std::int64_t>(index)));
    auto& s = v.script;
    s.duration_ms = section->get_int("duration_ms", 0);
    s.bpm.baseline = section->get_double("bpm.baseline", s.bpm.baseline);
    s.bpm.drift_per_min = section->get_double("bpm.drift_per_min", s.bpm.drift_per_min);
    s.bpm.noise_sd = section->get_double("bpm.noise_sd", s.bpm.noise_sd);
    s.stretch.baseline = section->get_double("stretch.baseline", s.stretch.baseline);
    s.stretch.step = section->get_double("stretch.step", s.stretch.step);
    s.stretch.noise_sd = section->get_double("stretch.noise_sd", s.stretch.noise_sd);
    s.movement_times_ms = section->get_int_list("movements_ms");
    if (const auto* gaps = section->find("presence_gaps")) {
      std::stringstream ss(gaps->value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = kv::trim(item);
        if (item.empty()) continue;
        const auto plus = item.find('+');
        if (plus == std::string::npos) {
          throw Error(ErrorCode::ParseError,
                      "line " + std::to_string(gaps->line) + ": presence gap must be start+length");
        }
        const std::string what = "line " + std::to_string(gaps->line) + ": presence_gaps";
        s.presence_gaps.push_back({kv::to_int(kv::trim(item.substr(0, plus)), what),
                                   kv::to_int(kv::trim(item.substr(plus + 1)), what)});
      }
    }
    previous_end = v.arrive_at + s.duration_ms;
    scenario.visits.push_back(std::move(v));
  }
  scenario.validate();
  return scenario;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(kv::parse_file(path)); }

SimulatedBackend::SimulatedBackend(Scenario scenario, SimOptions options)
    : scenario_(std::move(scenario)), options_(options) {
  occupants_.reserve(scenario_.visits.size());
  for (const auto& v : scenario_.visits) occupants_.emplace_back(v.script, v.seed, v.arrive_at);
}

OccupantGenerator* SimulatedBackend::occupant_at(TimeMs t) {
  for (auto& o : occupants_) {
    if (o.present(t)) return &o;
  }
  return nullptr;
}

OccupantGenerator* SimulatedBackend::last_arrived_before(TimeMs t) {
  OccupantGenerator* found = nullptr;
  for (auto& o : occupants_) {
    if (o.arrive_at() <= t) found = &o;
  }
  return found;
}

void SimulatedBackend::ensure_open() const {
  if (closed_) throw Error(ErrorCode::BackendClosed, "simulated backend is closed");
}

void SimulatedBackend::record(TimeMs t, std::string channel, std::string detail) {
  log_.push_back({t, std::move(channel), std::move(detail)});
}

double SimulatedBackend::read_distance_cm(TimeMs now) {
  ensure_open();
  double cm = options_.vacant_cm;
  if (override_cm_) {
    cm = *override_cm_;
  } else if (occupant_at(now)) {
    cm = options_.occupied_cm;
  }
  if (log_distance_) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", cm);
    record(now, "distance", buf);
  }
  return cm;
}

void SimulatedBackend::start_sensors(TimeMs now) {
  ensure_open();
  sensors_on_ = true;
  next_stretch_t_ = now;
  double first_ibi = 1000.0;
  if (auto* o = occupant_at(now)) {
    const auto& p = o->script().bpm;
    first_ibi = 60000.0 / (p.baseline + p.drift_per_min * static_cast<double>(now - o->arrive_at()) / 60000.0);
  }
  next_beat_t_ = static_cast<double>(now) + first_ibi;
  record(now, "sensors_on");
}

void SimulatedBackend::stop_sensors(TimeMs now) {
  ensure_open();
  sensors_on_ = false;
  record(now, "sensors_off");
}

std::vector<BpmSample> SimulatedBackend::read_pulse(TimeMs now) {
  ensure_open();
  std::vector<BpmSample> out;
  if (sensors_on_) {
    while (next_beat_t_ <= static_cast<double>(now)) {
      const auto t = static_cast<TimeMs>(std::llround(next_beat_t_));
      if (auto* o = occupant_at(t)) {
        const double bpm = o->bpm_at(t);
        out.push_back({t, bpm});
        next_beat_t_ += 60000.0 / bpm;
      } else {
        next_beat_t_ += 1000.0;  // no finger on the sensor
      }
    }
  }
  record(now, "pulse", std::to_string(out.size()));
  return out;
}

std::vector<StretchSample> SimulatedBackend::read_stretch(TimeMs now) {
  ensure_open();
  std::vector<StretchSample> out;
  if (sensors_on_) {
    while (next_stretch_t_ <= now) {
      const TimeMs t = next_stretch_t_;
      double value = 0.0;
      if (auto* o = occupant_at(t)) {
        value = o->stretch_at(t);
      } else if (auto* last = last_arrived_before(t)) {
        value = last->script().stretch.baseline;
      }
      out.push_back({t, value});
      next_stretch_t_ += options_.stretch_period_ms;
    }
  }
  record(now, "stretch", std::to_string(out.size()));
  return out;
}

TimeMs SimulatedBackend::actuate(const Actuation& what, TimeMs now) {
  ensure_open();
  if (const auto* pulse = std::get_if<replay::VibrationPulse>(&what)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "strength=%.2f duration_ms=%lld", pulse->strength,
                  static_cast<long long>(pulse->duration_ms));
    record(now, "vibrate", buf);
    return now + pulse->duration_ms;
  }
  record(now, "swing");
  return now + options_.swing_stroke_ms;
}

std::size_t SimulatedBackend::load_schedule(const replay::ReplaySchedule& schedule, TimeMs now) {
  ensure_open();
  const auto pages = wire::schedule_pages(schedule);
  record(now, "pages", std::to_string(pages.size()));
  return pages.size();
}

void SimulatedBackend::close() {
  if (!closed_) record(log_.empty() ? 0 : log_.back().t, "closed");
  closed_ = true;
}

std::string SimulatedBackend::io_log_csv() const {
  std::string out = "t_ms,channel,detail\n";
  for (const auto& e : log_) {
    out += std::to_string(e.t);
    out += ',';
    out += e.channel;
    out += ',';
    out += e.detail;
    out += '\n';
  }
  return out;
}

}  // namespace heartsway::device
