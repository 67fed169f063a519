#include "heartsway/device.hpp"

#include <cmath>

#include "heartsway/error.hpp"

namespace heartsway::device {

std::string_view to_string(Presence p) noexcept { return p == Presence::Occupied ? "Occupied" : "Vacant"; }

void PresenceParams::validate() const {
  if (!(threshold_cm > 0.0)) throw Error(ErrorCode::InvalidParams, "presence.threshold_cm must be > 0");
  if (debounce_count < 1) throw Error(ErrorCode::InvalidParams, "presence.debounce_count must be >= 1");
  if (poll_period_ms <= 0) throw Error(ErrorCode::InvalidParams, "presence.poll_period_ms must be > 0");
}

PresenceUpdate presence_update(const PresenceState& state, double distance_cm, const PresenceParams& params) {
  if (!(distance_cm >= 0.0) || !std::isfinite(distance_cm)) {
    throw Error(ErrorCode::InvalidParams, "distance must be a non-negative reading");
  }
  const Presence reading = distance_cm < params.threshold_cm ? Presence::Occupied : Presence::Vacant;
  PresenceUpdate out{state, std::nullopt};
  if (reading == state.settled) {
    out.next.streak = 0;
    return out;
  }
  out.next.streak = state.streak + 1;
  if (out.next.streak >= params.debounce_count) {
    out.next = {reading, 0};
    out.transition = reading;
  }
  return out;
}

}  // namespace heartsway::device
