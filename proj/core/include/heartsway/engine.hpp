#pragma once

// The orchestrator. One thread drives tick(); everything else (HTTP
// handlers, signal handlers) talks to it through submit() and snapshot().

#include <condition_variable>
#include <cstdint>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <variant>
#include <vector>

#include "heartsway/clock.hpp"
#include "heartsway/config.hpp"
#include "heartsway/device.hpp"
#include "heartsway/error.hpp"
#include "heartsway/events.hpp"
#include "heartsway/replay.hpp"
#include "heartsway/tracestore.hpp"

namespace heartsway::session {

enum class Phase { Idle, Occupied, Preparing };
std::string_view to_string(Phase p) noexcept;

struct WozCue {
  std::uint64_t id = 0;
  TimeMs due_at = 0;
  TimeMs issue_at = 0;
  bool acknowledged = false;
  std::optional<TimeMs> late_by_ms;

  friend bool operator==(const WozCue&, const WozCue&) = default;
};

/// One cue per swing playback event with replay_start < due <= replay_end,
/// issued lead_ms ahead (never before replay_start). Ids count from
/// first_id.
std::vector<WozCue> woz_cues(const replay::ReplaySchedule& schedule, TimeMs replay_start, TimeMs replay_end,
                             TimeMs lead_ms, std::uint64_t first_id = 1);

/// Lateness of an acknowledgement: nullopt within tolerance of due_at.
std::optional<TimeMs> ack_lateness(TimeMs due_at, TimeMs acked_at, TimeMs tolerance_ms);

struct AckCue {
  std::uint64_t id = 0;
};
/// nullopt clears the override and hands presence back to the sensor.
struct OverridePresence {
  std::optional<device::Presence> state;
};
struct LoadSeedTrace {
  std::string path;
};
struct Shutdown {};

using Command = std::variant<AckCue, OverridePresence, LoadSeedTrace, Shutdown>;

struct CommandResult {
  bool accepted = false;
  std::optional<ErrorCode> error;
  std::string message;
};

/// Parses {"type":"AckCue","id":3} style documents. Throws Error(ParseError).
Command parse_command(const std::string& json_text);

struct ReplayStatus {
  SessionId source_session;
  TimeMs started_at = 0;
  TimeMs elapsed_ms = 0;
  TimeMs loop_period_ms = 0;
  std::int64_t loop_index = 0;
  std::size_t beat_count = 0;
  std::size_t swing_count = 0;
  std::size_t beats_fired = 0;
  std::size_t swings_fired = 0;
  std::optional<replay::EventKind> next_kind;
  std::optional<TimeMs> next_offset_ms;
  std::optional<TimeMs> next_in_ms;
};

/// Status document. Counts and timings only; never sample values.
struct Snapshot {
  TimeMs t = 0;
  Phase phase = Phase::Idle;
  device::Presence presence = device::Presence::Vacant;
  std::optional<device::Presence> presence_override;
  std::optional<SessionId> session;
  std::optional<TimeMs> session_duration_ms;
  std::optional<TimeMs> rejoin_deadline;
  std::optional<ReplayStatus> replay;
  bool prepared = false;
  bool woz_mode = false;
  std::vector<WozCue> pending_cues;
  std::uint64_t sessions_completed = 0;
};

std::string to_json(const Snapshot& s);

class Engine {
 public:
  Engine(EngineConfig config, device::Backend& backend, store::TraceStore& store, const Clock& clock,
         EventBus& bus);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Processes queued commands and everything due at clock.now_ms().
  void tick();

  /// Earliest time anything is scheduled to happen.
  TimeMs next_wake() const;

  /// Queues a command for the next tick.
  std::future<CommandResult> submit(Command cmd);

  Snapshot snapshot() const;

  bool stop_requested() const;
  void request_stop();

  /// Finalizes and prepares a live session (clean shutdown), stops sensors.
  void shutdown();

  /// Drives a VirtualClock from its current time to `until` (or a Shutdown
  /// command), jumping straight to each next_wake().
  void run_virtual(VirtualClock& clock, TimeMs until);
  /// Real-time loop until stop is requested; sleeps between wakes.
  void run_realtime(std::stop_token stop = {});

 private:
  struct Replay;
  struct Pending {
    Command cmd;
    std::promise<CommandResult> done;
  };

  EngineConfig config_;
  device::Backend& backend_;
  store::TraceStore& store_;
  const Clock& clock_;
  EventBus& bus_;

  mutable std::mutex mu_;  // engine state
  std::mutex queue_mu_;
  std::condition_variable_any queue_cv_;
  std::vector<Pending> queue_;

  Phase phase_ = Phase::Idle;
  device::PresenceState presence_;
  std::optional<device::Presence> override_;
  std::optional<SessionId> live_;
  TimeMs live_started_at_ = 0;
  std::optional<TimeMs> left_at_;  // during the rejoin grace
  bool capped_ = false;            // auto-finalized; wait for vacancy
  TimeMs next_poll_ = 0;
  bool started_ = false;
  std::unique_ptr<Replay> replay_;
  std::vector<WozCue> cues_;
  std::uint64_t next_cue_id_ = 1;
  std::future<replay::ReplaySchedule> prep_;
  std::optional<SessionId> prep_source_;
  std::uint64_t sessions_completed_ = 0;
  bool stop_ = false;

  void process_commands(TimeMs now);
  CommandResult apply(const Command& cmd, TimeMs now);
  void poll_presence(TimeMs now);
  void on_occupied(TimeMs now);
  void on_vacant(TimeMs now);
  void begin(TimeMs now);
  void finish(TimeMs ended_at, TimeMs now, const char* reason);
  void read_sensors(TimeMs now);
  void fire_replay(TimeMs now);
  void update_cues(TimeMs now);
  void start_replay(replay::ReplaySchedule schedule, TimeMs now);
  void resume_replay(TimeMs now);
  void settle_preparation(TimeMs now, bool wait);
  void set_phase(Phase p, TimeMs now, const std::string& extra = {});
  void fail_safe(const std::exception& e, TimeMs now);
  void emit(TimeMs t, EventKind kind, const std::string& detail = "{}");
  Snapshot snapshot_locked(TimeMs now) const;
};

}  // namespace heartsway::session
