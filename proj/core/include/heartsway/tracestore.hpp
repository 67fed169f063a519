#pragma once

// Local persistence for the occupant chain. Holds at most the live session
// and the immediate predecessor; everything older is physically deleted.
//
// On-disk layout under the data directory:
//   LOCK                      single-instance advisory lock
//   state.json                id counter, live id, id awaiting preparation
//   prepared.json             the one prepared trace, if any
//   sessions/<id>/meta.json   started_at / ended_at
//   sessions/<id>/bpm.csv     append-only `t_ms,bpm`
//   sessions/<id>/stretch.csv append-only `t_ms,stretch`

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "heartsway/replay.hpp"
#include "heartsway/types.hpp"

namespace heartsway::store {

struct PreparedTrace {
  SessionId source_session;
  replay::ReplaySchedule schedule;
  TimeMs prepared_at = 0;
  bool consumed = false;

  friend bool operator==(const PreparedTrace&, const PreparedTrace&) = default;
};

/// Outcome of opening a store whose previous owner did not shut down cleanly.
struct Recovery {
  /// The interrupted session, closed at its last sample and awaiting preparation.
  std::optional<SessionRecord> closed;
  /// An interrupted session with no samples, deleted instead of closed.
  std::optional<SessionId> discarded;
};

class TraceStore {
 public:
  /// Opens (creating if needed) the store and takes the directory lock.
  /// Throws Error(StoreLocked) when another process holds it.
  explicit TraceStore(std::filesystem::path data_dir);
  ~TraceStore();

  TraceStore(const TraceStore&) = delete;
  TraceStore& operator=(const TraceStore&) = delete;

  const std::filesystem::path& data_dir() const noexcept { return dir_; }

  /// Crash recovery performed by the constructor (empty when the last run
  /// shut down cleanly).
  const Recovery& recovery() const noexcept { return recovery_; }

  SessionId begin_session(TimeMs now);
  std::size_t append(const SessionId& id, std::span<const BpmSample> samples);
  std::size_t append(const SessionId& id, std::span<const StretchSample> samples);
  SessionRecord finalize_session(const SessionId& id, TimeMs now);

  void install_prepared(PreparedTrace trace);
  /// Hands out the pending trace once; later calls return nullopt until a new
  /// trace is installed.
  std::optional<PreparedTrace> take_prepared();
  /// True when an unconsumed trace is waiting.
  bool has_prepared() const;
  /// The stored trace, consumed or not, without touching it.
  std::optional<PreparedTrace> peek_prepared() const;

  std::optional<SessionId> live_session() const;
  /// The finalized session still retained (awaiting preparation or feeding
  /// the current prepared trace).
  std::optional<SessionId> predecessor() const;

  /// Full record of a retained session. Throws SessionPurged for ids that
  /// were issued but deleted, SessionNotFound for ids never issued.
  SessionRecord load(const SessionId& id) const;

  /// Ids of every session whose raw samples are still on disk.
  std::vector<SessionId> retained_sessions() const;

 private:
  struct State {
    std::uint64_t next_id = 1;
    std::optional<SessionId> live;
    std::optional<SessionId> pending;  // finalized, not yet prepared
  };

  std::filesystem::path dir_;
  int lock_fd_ = -1;
  mutable std::mutex mu_;
  State state_;
  std::optional<PreparedTrace> prepared_;
  Recovery recovery_;
  // Highest timestamp appended per stream of the live session.
  std::optional<TimeMs> last_bpm_t_;
  std::optional<TimeMs> last_stretch_t_;

  std::filesystem::path session_dir(const SessionId& id) const;
  void save_state() const;
  void save_prepared() const;
  SessionRecord load_locked(const SessionId& id) const;
  void require_live(const SessionId& id) const;
  void enforce_retention();
  void load_documents();
  void recover();
};

/// Parses an id issued by this store ("S" + decimal counter).
std::optional<std::uint64_t> parse_session_number(const SessionId& id);

/// `t_ms,bpm` / `t_ms,stretch` CSV bodies for export.
std::string bpm_csv(const SessionRecord& record);
std::string stretch_csv(const SessionRecord& record);

}  // namespace heartsway::store
