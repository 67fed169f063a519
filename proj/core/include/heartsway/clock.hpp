#pragma once

#include <atomic>
#include <chrono>

#include "heartsway/types.hpp"

namespace heartsway {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimeMs now_ms() const = 0;
};

/// Wall clock in epoch milliseconds.
class SystemClock final : public Clock {
 public:
  TimeMs now_ms() const override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }
};

/// Manually advanced clock; lets hour-long scenarios run in milliseconds.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(TimeMs start = 0) : now_(start) {}
  TimeMs now_ms() const override { return now_.load(); }
  void set(TimeMs t) { now_.store(t); }
  void advance(TimeMs dt) { now_.fetch_add(dt); }

 private:
  std::atomic<TimeMs> now_;
};

}  // namespace heartsway
