#pragma once

// Numbered engine events with a bounded replay buffer. The bus is the only
// engine state the HTTP layer touches.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "heartsway/types.hpp"

namespace heartsway {

enum class EventKind {
  PhaseChanged,
  PresenceChanged,
  BeatFired,
  SwingFired,
  CueIssued,
  CueAcked,
  CueLate,
  PagesSent,
  CommandReceived,
  Error,
  GapNotice,
};

std::string_view to_string(EventKind kind) noexcept;

struct ApiEvent {
  std::uint64_t seq = 0;
  TimeMs t = 0;
  EventKind kind = EventKind::Error;
  std::string detail = "{}";  // JSON object text

  friend bool operator==(const ApiEvent&, const ApiEvent&) = default;
};

/// {"seq":..,"t":..,"kind":"..","detail":{..}} on one line.
std::string to_json(const ApiEvent& event);

inline constexpr std::size_t kEventBufferSize = 1000;

class EventBus {
 public:
  explicit EventBus(std::size_t capacity = kEventBufferSize);

  /// Assigns the next seq (starting at 1). `sink`, if set, sees every event
  /// in publish order.
  std::uint64_t publish(TimeMs t, EventKind kind, std::string detail = "{}");

  /// Buffered events with seq >= from_seq. When some of those were already
  /// evicted, the result starts with a GapNotice whose seq is the last
  /// missed one.
  std::vector<ApiEvent> since(std::uint64_t from_seq) const;

  /// Blocks until an event with seq >= from_seq exists, the timeout passes,
  /// or the bus is closed; then behaves like since().
  std::vector<ApiEvent> wait(std::uint64_t from_seq, std::chrono::milliseconds timeout) const;

  std::uint64_t last_seq() const;
  void close();
  bool closed() const;

  void set_sink(std::function<void(const ApiEvent&)> sink);

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::deque<ApiEvent> ring_;
  std::uint64_t next_seq_ = 1;
  bool closed_ = false;
  std::function<void(const ApiEvent&)> sink_;

  std::vector<ApiEvent> since_locked(std::uint64_t from_seq) const;
};

}  // namespace heartsway
