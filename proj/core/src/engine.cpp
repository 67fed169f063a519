#include "heartsway/engine.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace heartsway::session {

using json = nlohmann::ordered_json;

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::Occupied: return "Occupied";
    case Phase::Preparing: return "Preparing";
  }
  return "Unknown";
}

std::vector<WozCue> woz_cues(const replay::ReplaySchedule& schedule, TimeMs replay_start, TimeMs replay_end,
                             TimeMs lead_ms, std::uint64_t first_id) {
  std::vector<WozCue> out;
  if (schedule.swing_offsets_ms.empty() || replay_end <= replay_start) return out;
  replay::ReplayCursor cursor(schedule);
  cursor.seek_after(-1);
  while (auto ev = cursor.peek()) {
    const TimeMs due = replay_start + ev->elapsed_ms;
    if (due > replay_end) break;
    cursor.pop();
    if (ev->kind != replay::EventKind::Swing || due <= replay_start) continue;
    out.push_back({first_id++, due, std::max(replay_start, due - lead_ms), false, std::nullopt});
  }
  return out;
}

std::optional<TimeMs> ack_lateness(TimeMs due_at, TimeMs acked_at, TimeMs tolerance_ms) {
  if (acked_at > due_at + tolerance_ms) return acked_at - due_at;
  return std::nullopt;
}

Command parse_command(const std::string& json_text) {
  const auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::ParseError, "command must be a JSON object");
  const auto type = doc.value("type", std::string());
  try {
    if (type == "AckCue") return AckCue{doc.at("id").get<std::uint64_t>()};
    if (type == "OverridePresence") {
      const auto& st = doc.at("state");
      if (st.is_null() || st == "Clear") return OverridePresence{};
      if (st == "Occupied") return OverridePresence{device::Presence::Occupied};
      if (st == "Vacant") return OverridePresence{device::Presence::Vacant};
      throw Error(ErrorCode::ParseError, "state must be Occupied, Vacant or Clear");
    }
    if (type == "LoadSeedTrace") return LoadSeedTrace{doc.at("path").get<std::string>()};
    if (type == "Shutdown") return Shutdown{};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad ") + type + " command: " + e.what());
  }
  throw Error(ErrorCode::ParseError, "unknown command type '" + type + "'");
}

namespace {

json cue_json(const WozCue& c, TimeMs now) {
  json j;
  j["id"] = c.id;
  j["kind"] = "Swing";
  j["due_at"] = c.due_at;
  j["in_ms"] = c.due_at - now;
  j["acknowledged"] = c.acknowledged;
  j["late_by_ms"] = c.late_by_ms ? json(*c.late_by_ms) : json(nullptr);
  return j;
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

replay::ReplaySchedule load_seed_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read seed trace " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  auto schedule = first != std::string::npos && text[first] == '{'
                      ? replay::schedule_from_json(text)
                      : replay::schedule_from_csv(text, SessionId{"seed"});
  if (schedule.source_session.value.empty()) schedule.source_session = SessionId{"seed"};
  schedule.validate();
  return schedule;
}

}  // namespace

std::string to_json(const Snapshot& s) {
  json j;
  j["t"] = s.t;
  j["phase"] = to_string(s.phase);
  j["presence"] = device::to_string(s.presence);
  j["presence_override"] = s.presence_override ? json(device::to_string(*s.presence_override)) : json(nullptr);
  j["session"] = s.session ? json(s.session->value) : json(nullptr);
  j["session_duration_ms"] = opt(s.session_duration_ms);
  j["rejoin_deadline"] = opt(s.rejoin_deadline);
  if (s.replay) {
    const auto& r = *s.replay;
    json rj;
    rj["source_session"] = r.source_session.value;
    rj["started_at"] = r.started_at;
    rj["elapsed_ms"] = r.elapsed_ms;
    rj["loop_period_ms"] = r.loop_period_ms;
    rj["loop_index"] = r.loop_index;
    rj["beat_count"] = r.beat_count;
    rj["swing_count"] = r.swing_count;
    rj["beats_fired"] = r.beats_fired;
    rj["swings_fired"] = r.swings_fired;
    rj["next_kind"] = r.next_kind ? json(replay::to_string(*r.next_kind)) : json(nullptr);
    rj["next_offset_ms"] = opt(r.next_offset_ms);
    rj["next_in_ms"] = opt(r.next_in_ms);
    j["replay"] = rj;
  } else {
    j["replay"] = nullptr;
  }
  j["prepared"] = s.prepared;
  j["woz_mode"] = s.woz_mode;
  j["pending_cues"] = json::array();
  for (const auto& c : s.pending_cues) j["pending_cues"].push_back(cue_json(c, s.t));
  j["sessions_completed"] = s.sessions_completed;
  return j.dump();
}

struct Engine::Replay {
  replay::ReplaySchedule schedule;
  TimeMs started_at;
  replay::ReplayCursor cursor;
  replay::ReplayCursor cue_cursor;  // runs woz_lead ahead of `cursor`
  std::size_t beats_fired = 0;
  std::size_t swings_fired = 0;

  Replay(replay::ReplaySchedule s, TimeMs start)
      : schedule(std::move(s)), started_at(start), cursor(schedule), cue_cursor(schedule) {
    cursor.seek_after(-1);
    cue_cursor.seek_after(-1);
  }
};

Engine::Engine(EngineConfig config, device::Backend& backend, store::TraceStore& store, const Clock& clock,
               EventBus& bus)
    : config_(std::move(config)), backend_(backend), store_(store), clock_(clock), bus_(bus) {}

Engine::~Engine() {
  if (prep_.valid()) prep_.wait();
}

void Engine::emit(TimeMs t, EventKind kind, const std::string& detail) { bus_.publish(t, kind, detail); }

void Engine::set_phase(Phase p, TimeMs now, const std::string& extra) {
  if (p == phase_) return;
  json d;
  d["from"] = to_string(phase_);
  d["to"] = to_string(p);
  d["session"] = live_ ? json(live_->value) : (prep_source_ ? json(prep_source_->value) : json(nullptr));
  if (live_ && p == Phase::Occupied) d["started_at"] = live_started_at_;
  if (!extra.empty()) d.update(json::parse(extra));
  phase_ = p;
  emit(now, EventKind::PhaseChanged, d.dump());
}

std::future<CommandResult> Engine::submit(Command cmd) {
  Pending p{std::move(cmd), {}};
  auto fut = p.done.get_future();
  {
    std::lock_guard lock(queue_mu_);
    queue_.push_back(std::move(p));
  }
  queue_cv_.notify_all();
  return fut;
}

bool Engine::stop_requested() const {
  std::lock_guard lock(mu_);
  return stop_;
}

void Engine::request_stop() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  queue_cv_.notify_all();
}

void Engine::process_commands(TimeMs now) {
  std::vector<Pending> batch;
  {
    std::lock_guard lock(queue_mu_);
    batch.swap(queue_);
  }
  for (auto& p : batch) {
    CommandResult r;
    try {
      r = apply(p.cmd, now);
    } catch (const Error& e) {
      r = {false, e.code(), e.what()};
    } catch (const std::exception& e) {
      r = {false, ErrorCode::Io, e.what()};
    }
    static constexpr const char* names[] = {"AckCue", "OverridePresence", "LoadSeedTrace", "Shutdown"};
    json d;
    d["type"] = names[p.cmd.index()];
    d["accepted"] = r.accepted;
    if (r.error) d["error"] = to_string(*r.error);
    emit(now, EventKind::CommandReceived, d.dump());
    p.done.set_value(std::move(r));
  }
}

CommandResult Engine::apply(const Command& cmd, TimeMs now) {
  if (const auto* ack = std::get_if<AckCue>(&cmd)) {
    auto it = std::find_if(cues_.begin(), cues_.end(),
                           [&](const WozCue& c) { return c.id == ack->id && !c.acknowledged; });
    if (it == cues_.end()) {
      return {false, ErrorCode::UnknownCue, "no pending cue " + std::to_string(ack->id)};
    }
    it->acknowledged = true;
    it->late_by_ms = ack_lateness(it->due_at, now, config_.woz_late_tolerance_ms);
    json d;
    d["id"] = it->id;
    d["due_at"] = it->due_at;
    d["late_by_ms"] = opt(it->late_by_ms);
    emit(now, EventKind::CueAcked, d.dump());
    cues_.erase(it);
    return {true, std::nullopt, "acknowledged"};
  }
  if (const auto* ov = std::get_if<OverridePresence>(&cmd)) {
    override_ = ov->state;
    return {true, std::nullopt, ov->state ? "override " + std::string(device::to_string(*ov->state)) : "override cleared"};
  }
  if (const auto* seed = std::get_if<LoadSeedTrace>(&cmd)) {
    if (phase_ != Phase::Idle) {
      return {false, ErrorCode::InvalidPhase, "seed traces load only while Idle"};
    }
    auto schedule = load_seed_file(seed->path);
    const auto source = schedule.source_session;
    store_.install_prepared({source, std::move(schedule), now, false});
    return {true, std::nullopt, "seed trace installed"};
  }
  stop_ = true;
  return {true, std::nullopt, "stopping"};
}

void Engine::tick() {
  std::lock_guard lock(mu_);
  const TimeMs now = clock_.now_ms();
  if (!started_) {
    started_ = true;
    next_poll_ = now;
    try {
      if (const auto& rec = store_.recovery().closed) {
        prep_source_ = rec->id;
        auto record = *rec;
        prep_ = std::async(std::launch::async, [record, f = config_.filter, p = config_.pelt] {
          return replay::prepare_schedule(record, f, p);
        });
        set_phase(Phase::Preparing, now);
      } else if (!config_.seed_trace.empty() && !store_.has_prepared()) {
        auto schedule = load_seed_file(config_.seed_trace);
        const auto source = schedule.source_session;
        store_.install_prepared({source, std::move(schedule), now, false});
      }
    } catch (const std::exception& e) {
      fail_safe(e, now);
    }
  }
  process_commands(now);
  try {
    settle_preparation(now, false);
    if (now >= next_poll_) {
      poll_presence(now);
      while (next_poll_ <= now) next_poll_ += config_.presence.poll_period_ms;
    }
    if (live_ && left_at_ && now >= *left_at_ + config_.rejoin_grace_ms) {
      finish(*left_at_, now, "vacant");
    }
    if (live_ && !left_at_ && now - live_started_at_ >= config_.max_session_ms) {
      finish(now, now, "max_length");
      capped_ = true;
    }
    fire_replay(now);
    update_cues(now);
  } catch (const std::exception& e) {
    fail_safe(e, now);
  }
}

void Engine::poll_presence(TimeMs now) {
  double cm;
  if (override_) {
    cm = *override_ == device::Presence::Occupied ? 0.0 : config_.presence.threshold_cm * 10.0;
  } else {
    cm = backend_.read_distance_cm(now);
  }
  const auto upd = device::presence_update(presence_, cm, config_.presence);
  presence_ = upd.next;
  if (upd.transition) {
    json d;
    d["presence"] = device::to_string(*upd.transition);
    d["source"] = override_ ? "override" : "sensor";
    emit(now, EventKind::PresenceChanged, d.dump());
    if (*upd.transition == device::Presence::Occupied) {
      on_occupied(now);
    } else {
      on_vacant(now);
    }
  }
  if (live_ && !left_at_) read_sensors(now);
}

void Engine::on_occupied(TimeMs now) {
  if (live_ && left_at_) {
    // back within the grace window: same session
    left_at_.reset();
    backend_.start_sensors(now);
    resume_replay(now);
    return;
  }
  if (live_) return;
  settle_preparation(now, true);
  begin(now);
}

void Engine::on_vacant(TimeMs now) {
  if (capped_) {
    capped_ = false;
    return;
  }
  if (!live_ || left_at_) return;
  backend_.stop_sensors(now);
  left_at_ = now;
  if (config_.rejoin_grace_ms <= 0) finish(now, now, "vacant");
}

void Engine::begin(TimeMs now) {
  live_ = store_.begin_session(now);
  live_started_at_ = now;
  left_at_.reset();
  set_phase(Phase::Occupied, now);
  backend_.start_sensors(now);
  if (auto trace = store_.take_prepared()) start_replay(std::move(trace->schedule), now);
}

void Engine::start_replay(replay::ReplaySchedule schedule, TimeMs now) {
  const auto pages = backend_.load_schedule(schedule, now);
  json d;
  d["pages"] = pages;
  d["beats"] = schedule.beat_offsets_ms.size();
  d["swings"] = schedule.swing_offsets_ms.size();
  d["source_session"] = schedule.source_session.value;
  emit(now, EventKind::PagesSent, d.dump());
  replay_ = std::make_unique<Replay>(std::move(schedule), now);
}

void Engine::resume_replay(TimeMs now) {
  if (!replay_) return;
  // events that fell inside the absence are skipped, not made up
  replay_->cursor.seek_after(now - replay_->started_at - 1);
  replay_->cue_cursor.seek_after(now - replay_->started_at - 1);
}

void Engine::finish(TimeMs ended_at, TimeMs now, const char* reason) {
  if (!left_at_) backend_.stop_sensors(now);
  replay_.reset();
  cues_.clear();
  const auto record = store_.finalize_session(*live_, ended_at);
  live_.reset();
  left_at_.reset();
  ++sessions_completed_;
  json d;
  d["session"] = record.id.value;
  d["duration_ms"] = record.duration_ms();
  d["reason"] = reason;
  d["bpm_samples"] = record.bpm.size();
  d["stretch_samples"] = record.stretch.size();
  if (record.bpm.empty() && record.stretch.empty()) {
    prep_source_.reset();
    set_phase(Phase::Idle, now, d.dump());
    return;
  }
  prep_source_ = record.id;
  set_phase(Phase::Preparing, now, d.dump());
  prep_ = std::async(std::launch::async, [record, f = config_.filter, p = config_.pelt] {
    return replay::prepare_schedule(record, f, p);
  });
}

void Engine::settle_preparation(TimeMs now, bool wait) {
  if (!prep_.valid()) return;
  if (!wait && prep_.wait_for(std::chrono::seconds(0)) != std::future_status::ready) return;
  auto fut = std::move(prep_);
  const auto source = prep_source_.value_or(SessionId{});
  try {
    auto schedule = fut.get();
    store_.install_prepared({source, std::move(schedule), now, false});
  } catch (const std::exception& e) {
    json d;
    d["where"] = "prepare";
    d["session"] = source.value;
    d["message"] = e.what();
    emit(now, EventKind::Error, d.dump());
  }
  if (phase_ == Phase::Preparing) set_phase(Phase::Idle, now);
  prep_source_.reset();
}

void Engine::read_sensors(TimeMs now) {
  const auto bpm = backend_.read_pulse(now);
  const auto stretch = backend_.read_stretch(now);
  if (!bpm.empty()) store_.append(*live_, bpm);
  if (!stretch.empty()) store_.append(*live_, stretch);
}

void Engine::fire_replay(TimeMs now) {
  if (!replay_ || !live_ || left_at_) return;
  auto& r = *replay_;
  while (auto ev = r.cursor.peek()) {
    const TimeMs due = r.started_at + ev->elapsed_ms;
    if (due > now) break;
    r.cursor.pop();
    json d;
    d["offset_ms"] = ev->offset_ms;
    d["loop_index"] = ev->loop_index;
    d["due_at"] = due;
    if (ev->kind == replay::EventKind::Beat) {
      backend_.actuate(config_.vibration, now);
      ++r.beats_fired;
      emit(now, EventKind::BeatFired, d.dump());
    } else {
      if (!config_.woz_mode) backend_.actuate(device::SwingStroke{}, now);
      ++r.swings_fired;
      d["woz"] = config_.woz_mode;
      emit(now, EventKind::SwingFired, d.dump());
    }
  }
}

void Engine::update_cues(TimeMs now) {
  if (!config_.woz_mode || !replay_ || !live_ || left_at_) return;
  auto& r = *replay_;
  while (auto ev = r.cue_cursor.peek()) {
    const TimeMs due = r.started_at + ev->elapsed_ms;
    if (due - config_.woz_lead_ms > now) break;
    r.cue_cursor.pop();
    if (ev->kind != replay::EventKind::Swing) continue;
    WozCue cue{next_cue_id_++, due, std::max(r.started_at, due - config_.woz_lead_ms), false, std::nullopt};
    json d = cue_json(cue, now);
    d["offset_ms"] = ev->offset_ms;
    d["loop_index"] = ev->loop_index;
    emit(now, EventKind::CueIssued, d.dump());
    cues_.push_back(cue);
  }
  for (auto& c : cues_) {
    if (!c.acknowledged && !c.late_by_ms && now > c.due_at + config_.woz_late_tolerance_ms) {
      c.late_by_ms = now - c.due_at;
      json d;
      d["id"] = c.id;
      d["due_at"] = c.due_at;
      d["late_by_ms"] = *c.late_by_ms;
      emit(now, EventKind::CueLate, d.dump());
    }
  }
}

void Engine::fail_safe(const std::exception& e, TimeMs now) {
  json d;
  d["where"] = "engine";
  d["message"] = e.what();
  emit(now, EventKind::Error, d.dump());
  try {
    if (live_ && !left_at_ && !backend_.is_closed()) backend_.stop_sensors(now);
  } catch (...) {
  }
  replay_.reset();
  cues_.clear();
  if (live_) {
    try {
      store_.finalize_session(*live_, std::max(now, live_started_at_ + 1));
    } catch (...) {
    }
    live_.reset();
    left_at_.reset();
  }
  if (prep_.valid()) prep_.wait();
  prep_ = {};
  prep_source_.reset();
  set_phase(Phase::Idle, now);
  if (backend_.is_closed()) stop_ = true;
}

TimeMs Engine::next_wake() const {
  std::lock_guard lock(mu_);
  TimeMs wake = started_ ? next_poll_ : clock_.now_ms();
  if (live_ && left_at_) wake = std::min(wake, *left_at_ + config_.rejoin_grace_ms);
  if (live_ && !left_at_) wake = std::min(wake, live_started_at_ + config_.max_session_ms);
  if (replay_ && live_ && !left_at_) {
    if (auto ev = replay_->cursor.peek()) wake = std::min(wake, replay_->started_at + ev->elapsed_ms);
    if (config_.woz_mode) {
      if (auto ev = replay_->cue_cursor.peek()) {
        wake = std::min(wake, replay_->started_at + ev->elapsed_ms - config_.woz_lead_ms);
      }
      for (const auto& c : cues_) {
        if (!c.late_by_ms) wake = std::min(wake, c.due_at + config_.woz_late_tolerance_ms + 1);
      }
    }
  }
  return wake;
}

Snapshot Engine::snapshot_locked(TimeMs now) const {
  Snapshot s;
  s.t = now;
  s.phase = phase_;
  s.presence = presence_.settled;
  s.presence_override = override_;
  s.session = live_;
  if (live_) s.session_duration_ms = now - live_started_at_;
  if (live_ && left_at_) s.rejoin_deadline = *left_at_ + config_.rejoin_grace_ms;
  if (replay_) {
    const auto& r = *replay_;
    ReplayStatus st;
    st.source_session = r.schedule.source_session;
    st.started_at = r.started_at;
    st.elapsed_ms = now - r.started_at;
    st.loop_period_ms = r.schedule.loop_period_ms;
    st.loop_index = st.elapsed_ms / std::max<TimeMs>(1, st.loop_period_ms);
    st.beat_count = r.schedule.beat_offsets_ms.size();
    st.swing_count = r.schedule.swing_offsets_ms.size();
    st.beats_fired = r.beats_fired;
    st.swings_fired = r.swings_fired;
    if (auto ev = r.cursor.peek()) {
      st.next_kind = ev->kind;
      st.next_offset_ms = ev->offset_ms;
      st.next_in_ms = r.started_at + ev->elapsed_ms - now;
    }
    s.replay = std::move(st);
  }
  s.prepared = store_.has_prepared();
  s.woz_mode = config_.woz_mode;
  for (const auto& c : cues_) {
    if (!c.acknowledged) s.pending_cues.push_back(c);
  }
  s.sessions_completed = sessions_completed_;
  return s;
}

Snapshot Engine::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_locked(clock_.now_ms());
}

void Engine::shutdown() {
  std::lock_guard lock(mu_);
  const TimeMs now = clock_.now_ms();
  try {
    settle_preparation(now, true);
    if (live_) {
      finish(left_at_ ? *left_at_ : std::max(now, live_started_at_ + 1), now, "shutdown");
      settle_preparation(now, true);
    }
  } catch (const std::exception& e) {
    fail_safe(e, now);
  }
}

void Engine::run_virtual(VirtualClock& clock, TimeMs until) {
  while (clock.now_ms() <= until) {
    tick();
    {
      std::lock_guard lock(mu_);
      // virtual time does not pass while preparing, so wait for it here
      settle_preparation(clock.now_ms(), true);
      if (stop_) break;
    }
    const TimeMs wake = next_wake();
    clock.set(std::max(wake, clock.now_ms() + 1));
  }
}

void Engine::run_realtime(std::stop_token stop) {
  while (!stop.stop_requested()) {
    tick();
    if (stop_requested()) break;
    const TimeMs wait = std::clamp<TimeMs>(next_wake() - clock_.now_ms(), 0, config_.presence.poll_period_ms);
    std::unique_lock lock(queue_mu_);
    queue_cv_.wait_for(lock, stop, std::chrono::milliseconds(wait), [&] { return !queue_.empty(); });
  }
}

}  // namespace heartsway::session
