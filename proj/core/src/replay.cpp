#include "heartsway/replay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "heartsway/error.hpp"

namespace heartsway::replay {

using nlohmann::json;

namespace {

void check_offsets(const std::vector<TimeMs>& offsets, TimeMs period, const char* name) {
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] < 0 || offsets[i] >= period) {
      throw Error(ErrorCode::InvalidParams,
                  std::string(name) + " offset " + std::to_string(offsets[i]) +
                      " outside [0, loop period)");
    }
    if (i > 0 && offsets[i] <= offsets[i - 1]) {
      throw Error(ErrorCode::InvalidParams, std::string(name) + " offsets not strictly increasing");
    }
  }
}

}  // namespace

void ReplaySchedule::validate() const {
  if (loop_period_ms <= 0) {
    throw Error(ErrorCode::InvalidParams, "loop period must be positive");
  }
  check_offsets(beat_offsets_ms, loop_period_ms, "beat");
  check_offsets(swing_offsets_ms, loop_period_ms, "swing");
}

std::string_view to_string(EventKind kind) noexcept {
  return kind == EventKind::Swing ? "swing" : "beat";
}

std::uint8_t VibrationPulse::strength_255() const noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(strength, 0.0, 1.0) * 255.0));
}

void VibrationPulse::validate() const {
  if (!(strength > 0.0 && strength <= 1.0)) {
    throw Error(ErrorCode::InvalidParams, "vibration.strength must be in (0, 1]");
  }
  if (duration_ms <= 0) {
    throw Error(ErrorCode::InvalidParams, "vibration.duration_ms must be > 0");
  }
}

ReplaySchedule prepare_schedule(const SessionRecord& record,
                                const signal::FilterParams& filter,
                                const signal::PeltParams& pelt) {
  if (record.live()) {
    throw Error(ErrorCode::SessionNotLive, "cannot prepare a live session");
  }
  ReplaySchedule schedule;
  schedule.source_session = record.id;
  schedule.loop_period_ms = *record.ended_at - record.started_at;
  if (schedule.loop_period_ms <= 0) {
    throw Error(ErrorCode::InvalidParams, "session has non-positive duration");
  }

  if (!record.bpm.empty()) {
    // Accumulate in floating point and round each offset so rounding error
    // never drifts across a long session.
    double elapsed = 0.0;
    for (const auto& ibi : signal::bpm_to_ibi(record.bpm)) {
      elapsed += ibi.ibi_ms;
      const auto offset = static_cast<TimeMs>(std::llround(elapsed));
      if (offset >= schedule.loop_period_ms) break;
      if (schedule.beat_offsets_ms.empty() || offset > schedule.beat_offsets_ms.back()) {
        schedule.beat_offsets_ms.push_back(offset);
      }
    }
  }

  if (record.stretch.size() >= 2) {
    try {
      for (const auto& m : signal::movement_moments(record.stretch, filter, pelt)) {
        const TimeMs offset = m.t - record.started_at;
        if (offset < 0 || offset >= schedule.loop_period_ms) continue;
        if (schedule.swing_offsets_ms.empty() || offset > schedule.swing_offsets_ms.back()) {
          schedule.swing_offsets_ms.push_back(offset);
        }
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SeriesTooShort) throw;
    }
  }
  return schedule;
}

ReplayCursor::ReplayCursor(const ReplaySchedule& schedule) : schedule_(&schedule) {}

void ReplayCursor::wrap_if_done() {
  if (beat_ == schedule_->beat_offsets_ms.size() && swing_ == schedule_->swing_offsets_ms.size() &&
      !schedule_->empty()) {
    ++loop_;
    beat_ = 0;
    swing_ = 0;
  }
}

void ReplayCursor::seek_after(TimeMs elapsed_ms) {
  const TimeMs period = schedule_->loop_period_ms;
  if (elapsed_ms < 0) {
    loop_ = 0;
    beat_ = swing_ = 0;
    return;
  }
  loop_ = elapsed_ms / period;
  const TimeMs within = elapsed_ms % period;
  const auto& beats = schedule_->beat_offsets_ms;
  const auto& swings = schedule_->swing_offsets_ms;
  beat_ = static_cast<std::size_t>(std::upper_bound(beats.begin(), beats.end(), within) - beats.begin());
  swing_ = static_cast<std::size_t>(std::upper_bound(swings.begin(), swings.end(), within) - swings.begin());
  wrap_if_done();
}

std::optional<PlaybackEvent> ReplayCursor::peek() const {
  if (schedule_->empty()) return std::nullopt;
  const auto& beats = schedule_->beat_offsets_ms;
  const auto& swings = schedule_->swing_offsets_ms;
  const bool have_beat = beat_ < beats.size();
  const bool have_swing = swing_ < swings.size();

  PlaybackEvent ev;
  ev.loop_index = loop_;
  if (have_swing && (!have_beat || swings[swing_] <= beats[beat_])) {
    ev.kind = EventKind::Swing;
    ev.offset_ms = swings[swing_];
  } else {
    ev.kind = EventKind::Beat;
    ev.offset_ms = beats[beat_];
  }
  ev.elapsed_ms = loop_ * schedule_->loop_period_ms + ev.offset_ms;
  return ev;
}

PlaybackEvent ReplayCursor::pop() {
  auto ev = peek();
  if (!ev) throw Error(ErrorCode::InvalidParams, "cursor over an empty schedule");
  if (ev->kind == EventKind::Swing) {
    ++swing_;
  } else {
    ++beat_;
  }
  wrap_if_done();
  return *ev;
}

std::optional<Upcoming> next_event(const ReplaySchedule& schedule, TimeMs elapsed_ms) {
  if (schedule.loop_period_ms <= 0) {
    throw Error(ErrorCode::InvalidParams, "loop period must be positive");
  }
  if (schedule.empty()) return std::nullopt;
  ReplayCursor cursor(schedule);
  cursor.seek_after(elapsed_ms);
  const auto ev = cursor.peek();
  return Upcoming{*ev, ev->elapsed_ms - elapsed_ms};
}

std::vector<Page> paginate(std::span<const TimeMs> offsets, std::size_t page_size) {
  if (page_size == 0) throw Error(ErrorCode::InvalidParams, "page_size must be >= 1");
  const std::size_t total = (offsets.size() + page_size - 1) / page_size;
  std::vector<Page> pages;
  pages.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto chunk = offsets.subspan(i * page_size, std::min(page_size, offsets.size() - i * page_size));
    pages.push_back({i, total, {chunk.begin(), chunk.end()}});
  }
  return pages;
}

std::string to_json(const ReplaySchedule& schedule) {
  json doc = {
      {"source_session", schedule.source_session.value},
      {"loop_period_ms", schedule.loop_period_ms},
      {"beat_offsets_ms", schedule.beat_offsets_ms},
      {"swing_offsets_ms", schedule.swing_offsets_ms},
  };
  return doc.dump();
}

ReplaySchedule schedule_from_json(const std::string& text) {
  ReplaySchedule schedule;
  try {
    const auto doc = json::parse(text);
    schedule.source_session = {doc.at("source_session").get<std::string>()};
    schedule.loop_period_ms = doc.at("loop_period_ms").get<TimeMs>();
    schedule.beat_offsets_ms = doc.at("beat_offsets_ms").get<std::vector<TimeMs>>();
    schedule.swing_offsets_ms = doc.at("swing_offsets_ms").get<std::vector<TimeMs>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("schedule document: ") + e.what());
  }
  schedule.validate();
  return schedule;
}

std::string to_csv(const ReplaySchedule& schedule) {
  std::vector<std::pair<TimeMs, EventKind>> rows;
  for (auto o : schedule.swing_offsets_ms) rows.emplace_back(o, EventKind::Swing);
  for (auto o : schedule.beat_offsets_ms) rows.emplace_back(o, EventKind::Beat);
  std::sort(rows.begin(), rows.end());

  std::ostringstream out;
  out << "kind,offset_ms\n";
  for (const auto& [offset, kind] : rows) out << to_string(kind) << ',' << offset << '\n';
  out << "end," << schedule.loop_period_ms << '\n';
  return out.str();
}

ReplaySchedule schedule_from_csv(const std::string& text, SessionId source) {
  ReplaySchedule schedule;
  schedule.source_session = std::move(source);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == "kind,offset_ms") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected kind,offset_ms");
    }
    const std::string kind = line.substr(0, comma);
    TimeMs offset = 0;
    try {
      std::size_t used = 0;
      offset = std::stoll(line.substr(comma + 1), &used);
      if (comma + 1 + used != line.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad offset");
    }
    if (kind == "beat") {
      schedule.beat_offsets_ms.push_back(offset);
    } else if (kind == "swing") {
      schedule.swing_offsets_ms.push_back(offset);
    } else if (kind == "end") {
      schedule.loop_period_ms = offset;
    } else {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unknown kind '" + kind + "'");
    }
  }
  std::sort(schedule.beat_offsets_ms.begin(), schedule.beat_offsets_ms.end());
  std::sort(schedule.swing_offsets_ms.begin(), schedule.swing_offsets_ms.end());
  schedule.validate();
  return schedule;
}

std::string format_clock(TimeMs ms) {
  const bool negative = ms < 0;
  if (negative) ms = -ms;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%02lld:%02lld.%03lld", negative ? "-" : "",
                static_cast<long long>(ms / 60000), static_cast<long long>((ms / 1000) % 60),
                static_cast<long long>(ms % 1000));
  return buf;
}

std::string cue_sheet(const ReplaySchedule& schedule) {
  std::ostringstream out;
  out << "swing cue sheet\n";
  out << "source session: " << (schedule.source_session.empty() ? "-" : schedule.source_session.value) << '\n';
  out << "loop period:    " << format_clock(schedule.loop_period_ms) << " (" << schedule.loop_period_ms
      << " ms), repeats from the start\n";
  out << "per loop:       " << schedule.swing_offsets_ms.size() << " swings, "
      << schedule.beat_offsets_ms.size() << " beats (automatic)\n\n";
  if (schedule.swing_offsets_ms.empty()) {
    out << "  (no swings)\n";
    return out.str();
  }
  out << "   #  at         offset_ms\n";
  std::size_t n = 0;
  for (auto offset : schedule.swing_offsets_ms) {
    char row[96];
    std::snprintf(row, sizeof row, "%4zu  %-9s  %lld\n", ++n, format_clock(offset).c_str(),
                  static_cast<long long>(offset));
    out << row;
  }
  return out.str();
}

}  // namespace heartsway::replay
