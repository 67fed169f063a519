#include "heartsway/events.hpp"

#include <nlohmann/json.hpp>

namespace heartsway {

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::PhaseChanged: return "PhaseChanged";
    case EventKind::PresenceChanged: return "PresenceChanged";
    case EventKind::BeatFired: return "BeatFired";
    case EventKind::SwingFired: return "SwingFired";
    case EventKind::CueIssued: return "CueIssued";
    case EventKind::CueAcked: return "CueAcked";
    case EventKind::CueLate: return "CueLate";
    case EventKind::PagesSent: return "PagesSent";
    case EventKind::CommandReceived: return "CommandReceived";
    case EventKind::Error: return "Error";
    case EventKind::GapNotice: return "GapNotice";
  }
  return "Unknown";
}

std::string to_json(const ApiEvent& event) {
  nlohmann::ordered_json doc;
  doc["seq"] = event.seq;
  doc["t"] = event.t;
  doc["kind"] = to_string(event.kind);
  doc["detail"] = nlohmann::ordered_json::parse(event.detail, nullptr, false);
  if (doc["detail"].is_discarded()) doc["detail"] = event.detail;
  return doc.dump();
}

EventBus::EventBus(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

std::uint64_t EventBus::publish(TimeMs t, EventKind kind, std::string detail) {
  std::function<void(const ApiEvent&)> sink;
  ApiEvent ev;
  {
    std::lock_guard lock(mu_);
    ev = {next_seq_++, t, kind, std::move(detail)};
    ring_.push_back(ev);
    if (ring_.size() > capacity_) ring_.pop_front();
    sink = sink_;
    // sink runs under the lock so log order cannot diverge from seq order
    if (sink) sink(ev);
  }
  cv_.notify_all();
  return ev.seq;
}

std::vector<ApiEvent> EventBus::since_locked(std::uint64_t from_seq) const {
  std::vector<ApiEvent> out;
  if (from_seq == 0) from_seq = 1;
  if (ring_.empty()) return out;
  const auto oldest = ring_.front().seq;
  if (from_seq < oldest) {
    nlohmann::json detail = {{"missed_from", from_seq}, {"missed_to", oldest - 1}};
    out.push_back({oldest - 1, ring_.front().t, EventKind::GapNotice, detail.dump()});
    from_seq = oldest;
  }
  for (auto it = ring_.begin() + static_cast<std::ptrdiff_t>(std::min<std::uint64_t>(from_seq - oldest, ring_.size()));
       it != ring_.end(); ++it) {
    out.push_back(*it);
  }
  return out;
}

std::vector<ApiEvent> EventBus::since(std::uint64_t from_seq) const {
  std::lock_guard lock(mu_);
  return since_locked(from_seq);
}

std::vector<ApiEvent> EventBus::wait(std::uint64_t from_seq, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || next_seq_ > std::max<std::uint64_t>(from_seq, 1); });
  return since_locked(from_seq);
}

std::uint64_t EventBus::last_seq() const {
  std::lock_guard lock(mu_);
  return next_seq_ - 1;
}

void EventBus::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventBus::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

void EventBus::set_sink(std::function<void(const ApiEvent&)> sink) {
  std::lock_guard lock(mu_);
  sink_ = std::move(sink);
}

}  // namespace heartsway
