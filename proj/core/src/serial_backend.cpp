#include "heartsway/serial_backend.hpp"

#include <cmath>

#include "heartsway/error.hpp"

namespace heartsway::device {

SerialBackend::SerialBackend(std::unique_ptr<wire::Link> link, const Clock& clock, SerialOptions options)
    : link_(std::move(link)), clock_(clock), options_(options), distance_cm_(options.initial_distance_cm) {
  if (!link_) throw Error(ErrorCode::DeviceOpenFailed, "no link");
}

SerialBackend::~SerialBackend() = default;

void SerialBackend::ensure_open() const {
  if (closed_) throw Error(ErrorCode::BackendClosed, "serial backend is closed");
}

void SerialBackend::route(const wire::Decoded& frame) {
  if (const auto* d = std::get_if<wire::DistanceReport>(&frame.msg)) {
    distance_cm_ = d->cm;
  } else if (const auto* b = std::get_if<wire::BpmReport>(&frame.msg)) {
    bpm_.push_back({sensors_started_at_ + b->t_rel_ms, b->bpm_x10 / 10.0});
  } else if (const auto* s = std::get_if<wire::StretchReport>(&frame.msg)) {
    stretch_.push_back({sensors_started_at_ + s->t_rel_ms, static_cast<double>(s->value)});
  }
  // stray Acks/Nacks for commands we already gave up on are dropped
}

void SerialBackend::drain() {
  while (auto frame = link_->receive(std::chrono::milliseconds(0))) route(*frame);
}

void SerialBackend::command(const wire::Message& msg) {
  const auto frame = wire::encode(msg, seq_);
  const std::uint8_t expect = seq_;
  ++seq_;
  for (int attempt = 0; attempt < options_.transfer.attempts; ++attempt) {
    link_->send(frame);
    const auto deadline = std::chrono::steady_clock::now() + options_.transfer.ack_timeout;
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) break;
      auto reply = link_->receive(left);
      if (!reply) break;
      if (const auto* ack = std::get_if<wire::Ack>(&reply->msg); ack && ack->seq == expect) return;
      if (const auto* nack = std::get_if<wire::Nack>(&reply->msg); nack && nack->seq == expect) break;
      route(*reply);
    }
  }
  throw Error(ErrorCode::Timeout, std::string("controller did not acknowledge ") +
                                      std::string(wire::to_string(wire::type_of(msg))));
}

double SerialBackend::read_distance_cm(TimeMs) {
  ensure_open();
  drain();
  return distance_cm_;
}

void SerialBackend::start_sensors(TimeMs now) {
  ensure_open();
  sensors_started_at_ = now;
  bpm_.clear();
  stretch_.clear();
  command(wire::Start{});
}

void SerialBackend::stop_sensors(TimeMs) {
  ensure_open();
  command(wire::Stop{});
  drain();
  bpm_.clear();
  stretch_.clear();
}

std::vector<BpmSample> SerialBackend::read_pulse(TimeMs) {
  ensure_open();
  drain();
  return std::exchange(bpm_, {});
}

std::vector<StretchSample> SerialBackend::read_stretch(TimeMs) {
  ensure_open();
  drain();
  return std::exchange(stretch_, {});
}

TimeMs SerialBackend::actuate(const Actuation& what, TimeMs now) {
  ensure_open();
  if (const auto* pulse = std::get_if<replay::VibrationPulse>(&what)) {
    command(wire::Vibrate{pulse->strength_255(), static_cast<std::uint16_t>(pulse->duration_ms)});
    return now + pulse->duration_ms;
  }
  command(wire::Swing{});
  return now + options_.swing_stroke_ms;
}

std::size_t SerialBackend::load_schedule(const replay::ReplaySchedule& schedule, TimeMs) {
  ensure_open();
  const auto pages = wire::schedule_pages(schedule);
  last_transfer_ = wire::transfer_schedule(pages, *link_, clock_, seq_, options_.transfer,
                                           [this](const wire::Decoded& d) { route(d); });
  return pages.size();
}

void SerialBackend::close() {
  if (closed_) return;
  closed_ = true;
  link_.reset();
}

}  // namespace heartsway::device
