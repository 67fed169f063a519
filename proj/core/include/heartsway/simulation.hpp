#pragma once

// Desk-scale stand-ins for the hammock: scripted occupants and a backend
// that records every sensor read and actuation it serves.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "heartsway/device.hpp"
#include "heartsway/kv.hpp"

namespace heartsway::device {

struct BpmProfile {
  double baseline = 60.0;
  double drift_per_min = 0.0;  // bpm change per minute of occupancy
  double noise_sd = 0.0;
};

struct StretchProfile {
  double baseline = 100.0;
  double step = 300.0;  // level shift per movement (posture toggles)
  double noise_sd = 0.0;
};

struct PresenceGap {
  TimeMs start_ms = 0;  // relative to arrival
  TimeMs length_ms = 0;
};

struct OccupantScript {
  TimeMs duration_ms = 0;
  BpmProfile bpm;
  StretchProfile stretch;
  std::vector<TimeMs> movement_times_ms;  // relative to arrival
  std::vector<PresenceGap> presence_gaps;

  /// Throws Error(InvalidScript).
  void validate() const;
};

/// One occupant's deterministic signal source, anchored at their arrival.
class OccupantGenerator {
 public:
  OccupantGenerator(OccupantScript script, std::uint64_t seed, TimeMs arrive_at);

  TimeMs arrive_at() const noexcept { return arrive_at_; }
  TimeMs departs_at() const noexcept { return arrive_at_ + script_.duration_ms; }
  bool present(TimeMs t) const noexcept;

  /// Stretch reading at t: posture level plus noise. Each call draws noise.
  double stretch_at(TimeMs t);
  /// Heart rate at t, clamped to a plausible range. Each call draws noise.
  double bpm_at(TimeMs t);

  const OccupantScript& script() const noexcept { return script_; }

 private:
  OccupantScript script_;
  TimeMs arrive_at_;
  std::mt19937_64 stretch_rng_;
  std::mt19937_64 bpm_rng_;
};

struct SimulatedStreams {
  std::vector<BpmSample> bpm;
  std::vector<StretchSample> stretch;
  std::vector<std::pair<TimeMs, double>> distance;
  friend bool operator==(const SimulatedStreams&, const SimulatedStreams&) = default;
};

struct SimOptions {
  double occupied_cm = 18.0;
  double vacant_cm = 110.0;
  TimeMs stretch_period_ms = 1000;
  TimeMs swing_stroke_ms = 1500;
};

/// Complete streams for one occupant arriving at t = 0 with sensors on from
/// the start: 1 Hz stretch, one BPM reading per beat, distance every
/// poll_period_ms.
SimulatedStreams simulate_occupant(const OccupantScript& script, std::uint64_t seed,
                                   TimeMs poll_period_ms = 200, const SimOptions& options = {});

struct Visit {
  TimeMs arrive_at = 0;
  std::uint64_t seed = 0;
  OccupantScript script;
};

/// Occupants visiting one after another. Visits must not overlap.
struct Scenario {
  std::vector<Visit> visits;
  /// Time after the last departure the simulation keeps running.
  TimeMs tail_ms = 15000;

  void validate() const;
  TimeMs end_time() const;
};

/// Parses `[occupant]` sections. Keys per section: arrive_ms (absolute) or
/// gap_before_ms (after previous departure), duration_ms, seed,
/// bpm.baseline, bpm.drift_per_min, bpm.noise_sd, stretch.baseline,
/// stretch.step, stretch.noise_sd, movements_ms (comma list),
/// presence_gaps (comma list of start+length). Root key: tail_ms.
Scenario parse_scenario(const kv::Document& doc);
Scenario load_scenario(const std::string& path);

struct IoEntry {
  TimeMs t = 0;
  std::string channel;
  std::string detail;
  friend bool operator==(const IoEntry&, const IoEntry&) = default;
};

/// Backend over a Scenario. Every call is appended to an I/O log.
class SimulatedBackend final : public Backend {
 public:
  explicit SimulatedBackend(Scenario scenario, SimOptions options = {});

  double read_distance_cm(TimeMs now) override;
  void start_sensors(TimeMs now) override;
  void stop_sensors(TimeMs now) override;
  std::vector<BpmSample> read_pulse(TimeMs now) override;
  std::vector<StretchSample> read_stretch(TimeMs now) override;
  TimeMs actuate(const Actuation& what, TimeMs now) override;
  std::size_t load_schedule(const replay::ReplaySchedule& schedule, TimeMs now) override;
  void close() override;
  bool is_closed() const override { return closed_; }

  /// Forces distance readings (demo path when no scenario is scripted).
  void set_distance_override(std::optional<double> cm) { override_cm_ = cm; }

  const std::vector<IoEntry>& io_log() const noexcept { return log_; }
  /// `t_ms,channel,detail` lines with a header.
  std::string io_log_csv() const;
  /// Only distance reads are logged when false (keeps long runs small).
  void set_log_distance(bool on) { log_distance_ = on; }

  const Scenario& scenario() const noexcept { return scenario_; }

 private:
  Scenario scenario_;
  SimOptions options_;
  std::vector<OccupantGenerator> occupants_;
  std::vector<IoEntry> log_;
  std::optional<double> override_cm_;
  bool log_distance_ = true;
  bool closed_ = false;
  bool sensors_on_ = false;
  TimeMs next_stretch_t_ = 0;
  double next_beat_t_ = 0.0;

  OccupantGenerator* occupant_at(TimeMs t);
  OccupantGenerator* last_arrived_before(TimeMs t);
  void ensure_open() const;
  void record(TimeMs t, std::string channel, std::string detail = {});
};

}  // namespace heartsway::device
