#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heartsway/signal.hpp"
#include "heartsway/types.hpp"

namespace heartsway::replay {

/// A predecessor trace compiled to session-relative offsets. It never holds
/// raw samples, so purging the source session cannot invalidate it.
struct ReplaySchedule {
  SessionId source_session;
  std::vector<TimeMs> beat_offsets_ms;
  std::vector<TimeMs> swing_offsets_ms;
  TimeMs loop_period_ms = 0;

  bool empty() const noexcept { return beat_offsets_ms.empty() && swing_offsets_ms.empty(); }
  /// Throws Error(InvalidParams) when offsets are unsorted, negative, or not
  /// below a positive loop period.
  void validate() const;

  friend bool operator==(const ReplaySchedule&, const ReplaySchedule&) = default;
};

// Swing sorts before Beat: simultaneous events fire swing first.
enum class EventKind : std::uint8_t { Swing = 0, Beat = 1 };

std::string_view to_string(EventKind kind) noexcept;

struct PlaybackEvent {
  EventKind kind = EventKind::Beat;
  TimeMs offset_ms = 0;
  std::int64_t loop_index = 0;
  /// loop_index * loop_period + offset, relative to replay start.
  TimeMs elapsed_ms = 0;

  friend bool operator==(const PlaybackEvent&, const PlaybackEvent&) = default;
};

struct VibrationPulse {
  double strength = 0.40;
  TimeMs duration_ms = 100;
  int motor_rated_rpm = 9000;

  /// PWM duty on a 0..255 scale.
  std::uint8_t strength_255() const noexcept;
  void validate() const;
};

/// Compiles a finalized record. Beat offsets are cumulative IBIs starting at
/// the first interval; swing offsets are movement moments relative to
/// started_at; anything at or past the loop period is dropped. A record with
/// no usable stretch series yields no swings rather than an error.
ReplaySchedule prepare_schedule(const SessionRecord& record,
                                const signal::FilterParams& filter,
                                const signal::PeltParams& pelt);

struct Upcoming {
  PlaybackEvent event;
  TimeMs wait_ms = 0;  // event.elapsed_ms - elapsed
};

/// Earliest event strictly after `elapsed_ms` under looping. Returns nullopt
/// for a schedule with no events at all (it would idle forever).
std::optional<Upcoming> next_event(const ReplaySchedule& schedule, TimeMs elapsed_ms);

/// Walks playback events in firing order, loop after loop. Two events at the
/// same instant are both visited (swing first).
class ReplayCursor {
 public:
  explicit ReplayCursor(const ReplaySchedule& schedule);

  /// Positions the cursor at the first event with elapsed > `elapsed_ms`.
  /// Pass -1 to start from the very beginning.
  void seek_after(TimeMs elapsed_ms);

  std::optional<PlaybackEvent> peek() const;
  /// Returns the current event and advances. Precondition: peek() has a value.
  PlaybackEvent pop();

 private:
  const ReplaySchedule* schedule_;
  std::int64_t loop_ = 0;
  std::size_t beat_ = 0;
  std::size_t swing_ = 0;

  void wrap_if_done();
};

struct Page {
  std::size_t index = 0;
  std::size_t total = 0;
  std::vector<TimeMs> offsets;
  friend bool operator==(const Page&, const Page&) = default;
};

inline constexpr std::size_t kDefaultPageSize = 30;

/// Splits offsets into consecutive pages; only the last may be short. An
/// empty list gives zero pages. Throws Error(InvalidParams) for page_size 0.
std::vector<Page> paginate(std::span<const TimeMs> offsets,
                           std::size_t page_size = kDefaultPageSize);

// Serialization. The JSON document is what the trace store persists; the CSV
// form (`kind,offset_ms`, plus one `end,<loop_period_ms>` row) is for export
// and seed traces.
std::string to_json(const ReplaySchedule& schedule);
ReplaySchedule schedule_from_json(const std::string& text);
std::string to_csv(const ReplaySchedule& schedule);
ReplaySchedule schedule_from_csv(const std::string& text, SessionId source = {});

/// Plain-text swing cue sheet for a human operator rehearsing a replay.
std::string cue_sheet(const ReplaySchedule& schedule);

std::string format_clock(TimeMs ms);

}  // namespace heartsway::replay
