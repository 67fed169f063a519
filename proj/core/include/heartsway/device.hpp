#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "heartsway/replay.hpp"
#include "heartsway/types.hpp"

namespace heartsway::device {

enum class Presence { Vacant, Occupied };

std::string_view to_string(Presence p) noexcept;

struct PresenceParams {
  double threshold_cm = 40.0;
  int debounce_count = 3;
  TimeMs poll_period_ms = 200;

  void validate() const;
};

/// Debounce state: the settled presence plus the current streak of readings
/// that disagree with it.
struct PresenceState {
  Presence settled = Presence::Vacant;
  int streak = 0;
  friend bool operator==(const PresenceState&, const PresenceState&) = default;
};

struct PresenceUpdate {
  PresenceState next;
  std::optional<Presence> transition;
};

/// Readings below threshold_cm count toward Occupied, at or above toward
/// Vacant. debounce_count consecutive disagreeing readings flip the state.
PresenceUpdate presence_update(const PresenceState& state, double distance_cm, const PresenceParams& params);

struct SwingStroke {
  friend bool operator==(const SwingStroke&, const SwingStroke&) = default;
};

using Actuation = std::variant<replay::VibrationPulse, SwingStroke>;

/// Sensors and actuators of one installation. Backends are owned and driven
/// by a single task; they need not be thread-safe.
class Backend {
 public:
  virtual ~Backend() = default;

  /// The presence routine: always available, even while sensors are off.
  virtual double read_distance_cm(TimeMs now) = 0;

  virtual void start_sensors(TimeMs now) = 0;
  virtual void stop_sensors(TimeMs now) = 0;
  /// Samples produced since the previous read (empty while sensors are off).
  virtual std::vector<BpmSample> read_pulse(TimeMs now) = 0;
  virtual std::vector<StretchSample> read_stretch(TimeMs now) = 0;

  /// Fires an actuation and returns the time it completes.
  virtual TimeMs actuate(const Actuation& what, TimeMs now) = 0;

  /// Hands the controller the schedule about to be replayed. Returns the
  /// number of pages delivered.
  virtual std::size_t load_schedule(const replay::ReplaySchedule& schedule, TimeMs now) = 0;

  virtual void close() = 0;
  virtual bool is_closed() const = 0;
};

}  // namespace heartsway::device
