#pragma once

// Backend for the real controller on the other end of a wire::Link.
// Upstream reports are drained on every call, so the owner only has to keep
// polling read_distance_cm() for them to flow.

#include <memory>
#include <optional>
#include <vector>

#include "heartsway/clock.hpp"
#include "heartsway/device.hpp"
#include "heartsway/wire.hpp"

namespace heartsway::device {

struct SerialOptions {
  wire::TransferOptions transfer;
  /// Distance assumed before the controller reports one.
  double initial_distance_cm = 400.0;
  TimeMs swing_stroke_ms = 1500;
};

class SerialBackend final : public Backend {
 public:
  SerialBackend(std::unique_ptr<wire::Link> link, const Clock& clock, SerialOptions options = {});
  ~SerialBackend() override;

  double read_distance_cm(TimeMs now) override;
  void start_sensors(TimeMs now) override;
  void stop_sensors(TimeMs now) override;
  std::vector<BpmSample> read_pulse(TimeMs now) override;
  std::vector<StretchSample> read_stretch(TimeMs now) override;
  TimeMs actuate(const Actuation& what, TimeMs now) override;
  std::size_t load_schedule(const replay::ReplaySchedule& schedule, TimeMs now) override;
  void close() override;
  bool is_closed() const override { return closed_; }

  const wire::TransferReport& last_transfer() const noexcept { return last_transfer_; }

 private:
  std::unique_ptr<wire::Link> link_;
  const Clock& clock_;
  SerialOptions options_;
  std::uint8_t seq_ = 0;
  bool closed_ = false;
  TimeMs sensors_started_at_ = 0;
  double distance_cm_;
  std::vector<BpmSample> bpm_;
  std::vector<StretchSample> stretch_;
  wire::TransferReport last_transfer_;

  void ensure_open() const;
  void drain();
  void route(const wire::Decoded& frame);
  /// Sends one command and waits for its Ack with the usual retry budget.
  void command(const wire::Message& msg);
};

}  // namespace heartsway::device
