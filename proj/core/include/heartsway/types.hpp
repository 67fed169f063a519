#pragma once

#include <cstdint>
#include <string>

namespace heartsway {

/// Epoch milliseconds (or session-relative milliseconds where noted).
using TimeMs = std::int64_t;

struct BpmSample {
  TimeMs t = 0;
  double bpm = 0.0;
  friend bool operator==(const BpmSample&, const BpmSample&) = default;
};

struct IbiEvent {
  TimeMs t = 0;
  double ibi_ms = 0.0;
  friend bool operator==(const IbiEvent&, const IbiEvent&) = default;
};

struct StretchSample {
  TimeMs t = 0;
  double value = 0.0;
  friend bool operator==(const StretchSample&, const StretchSample&) = default;
};

/// A toss-and-turn instant. Timing only; intensity is never recorded.
struct MovementMoment {
  TimeMs t = 0;
  friend bool operator==(const MovementMoment&, const MovementMoment&) = default;
};

/// Opaque session identifier issued by the trace store.
struct SessionId {
  std::string value;
  bool empty() const noexcept { return value.empty(); }
  friend bool operator==(const SessionId&, const SessionId&) = default;
  friend auto operator<=>(const SessionId&, const SessionId&) = default;
};

}  // namespace heartsway

#include <optional>
#include <vector>

namespace heartsway {

/// One occupant's recorded trace. ended_at is empty while the session is live.
struct SessionRecord {
  SessionId id;
  TimeMs started_at = 0;
  std::optional<TimeMs> ended_at;
  std::vector<BpmSample> bpm;
  std::vector<StretchSample> stretch;

  bool live() const noexcept { return !ended_at.has_value(); }
  TimeMs duration_ms() const noexcept { return ended_at ? *ended_at - started_at : 0; }
};

}  // namespace heartsway
