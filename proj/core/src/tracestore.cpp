#include "heartsway/tracestore.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "heartsway/error.hpp"

namespace heartsway::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so readers never observe a half-written document.
void write_atomic(const fs::path& p, const std::string& body) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << body;
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

SessionId make_id(std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%06llu", static_cast<unsigned long long>(n));
  return {buf};
}

// Parses `t,value` lines. A final line without a newline is a torn write from
// a crash and is ignored.
template <typename Sample>
std::vector<Sample> read_log(const fs::path& p) {
  std::vector<Sample> out;
  if (!fs::exists(p)) return out;
  const std::string body = read_file(p);
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto nl = body.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string_view line(body.data() + pos, nl - pos);
    pos = nl + 1;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) continue;
    Sample s;
    auto [p1, ec1] = std::from_chars(line.data(), line.data() + comma, s.t);
    if (ec1 != std::errc{}) throw Error(ErrorCode::StoreCorrupt, "bad timestamp in " + p.string());
    const std::string rest(line.substr(comma + 1));
    double v = 0.0;
    try {
      v = std::stod(rest);
    } catch (const std::exception&) {
      throw Error(ErrorCode::StoreCorrupt, "bad value in " + p.string());
    }
    if constexpr (std::is_same_v<Sample, BpmSample>) {
      s.bpm = v;
    } else {
      s.value = v;
    }
    out.push_back(s);
  }
  return out;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Sample>
double sample_value(const Sample& s) {
  if constexpr (std::is_same_v<Sample, BpmSample>) {
    return s.bpm;
  } else {
    return s.value;
  }
}

template <typename Sample>
std::string to_lines(std::span<const Sample> samples) {
  std::string out;
  for (const auto& s : samples) {
    out += std::to_string(s.t);
    out += ',';
    out += format_value(sample_value(s));
    out += '\n';
  }
  return out;
}

json meta_doc(const SessionRecord& r) {
  json doc = {{"id", r.id.value}, {"started_at", r.started_at}};
  doc["ended_at"] = r.ended_at ? json(*r.ended_at) : json(nullptr);
  return doc;
}

}  // namespace

std::optional<std::uint64_t> parse_session_number(const SessionId& id) {
  const auto& s = id.value;
  if (s.size() < 2 || s[0] != 'S') return std::nullopt;
  std::uint64_t n = 0;
  auto [ptr, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), n);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return n;
}

TraceStore::TraceStore(fs::path data_dir) : dir_(std::move(data_dir)) {
  std::error_code ec;
  fs::create_directories(dir_ / "sessions", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create data directory " + dir_.string() + ": " + ec.message());

  const auto lock_path = dir_ / "LOCK";
  lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw Error(ErrorCode::Io, "cannot open " + lock_path.string());
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw Error(ErrorCode::StoreLocked, "data directory " + dir_.string() + " is in use by another instance");
  }

  try {
    load_documents();
    std::lock_guard lock(mu_);
    recover();
    enforce_retention();
  } catch (...) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw;
  }
}

void TraceStore::load_documents() {
  try {
    if (fs::exists(dir_ / "state.json")) {
      const auto doc = json::parse(read_file(dir_ / "state.json"));
      state_.next_id = doc.at("next_id").get<std::uint64_t>();
      if (!doc.at("live").is_null()) state_.live = SessionId{doc.at("live").get<std::string>()};
      if (!doc.at("pending").is_null()) state_.pending = SessionId{doc.at("pending").get<std::string>()};
    }
    if (fs::exists(dir_ / "prepared.json")) {
      const auto doc = json::parse(read_file(dir_ / "prepared.json"));
      PreparedTrace t;
      t.source_session = {doc.at("source_session").get<std::string>()};
      t.prepared_at = doc.at("prepared_at").get<TimeMs>();
      t.consumed = doc.at("consumed").get<bool>();
      t.schedule = replay::schedule_from_json(doc.at("schedule").dump());
      prepared_ = std::move(t);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::StoreCorrupt, e.what());
  }
}

TraceStore::~TraceStore() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

fs::path TraceStore::session_dir(const SessionId& id) const { return dir_ / "sessions" / id.value; }

void TraceStore::save_state() const {
  json doc = {{"next_id", state_.next_id}};
  doc["live"] = state_.live ? json(state_.live->value) : json(nullptr);
  doc["pending"] = state_.pending ? json(state_.pending->value) : json(nullptr);
  write_atomic(dir_ / "state.json", doc.dump());
}

void TraceStore::save_prepared() const {
  const auto path = dir_ / "prepared.json";
  if (!prepared_) {
    std::error_code ec;
    fs::remove(path, ec);
    return;
  }
  json doc = {
      {"source_session", prepared_->source_session.value},
      {"prepared_at", prepared_->prepared_at},
      {"consumed", prepared_->consumed},
      {"schedule", json::parse(replay::to_json(prepared_->schedule))},
  };
  write_atomic(path, doc.dump());
}

void TraceStore::recover() {
  if (!state_.live) return;
  const SessionId id = *state_.live;
  state_.live.reset();

  // The session that crashed was consuming any in-replay trace.
  if (prepared_ && prepared_->consumed) prepared_.reset();

  if (!fs::exists(session_dir(id))) {
    save_state();
    save_prepared();
    return;
  }
  SessionRecord record = load_locked(id);
  std::optional<TimeMs> last;
  for (const auto& s : record.bpm) last = std::max(last.value_or(s.t), s.t);
  for (const auto& s : record.stretch) last = std::max(last.value_or(s.t), s.t);

  if (!last) {
    std::error_code ec;
    fs::remove_all(session_dir(id), ec);
    recovery_.discarded = id;
  } else {
    record.ended_at = std::max(*last, record.started_at + 1);
    write_atomic(session_dir(id) / "meta.json", meta_doc(record).dump());
    state_.pending = id;
    recovery_.closed = std::move(record);
  }
  save_state();
  save_prepared();
}

void TraceStore::enforce_retention() {
  std::set<std::string> keep;
  if (state_.live) keep.insert(state_.live->value);
  if (state_.pending) keep.insert(state_.pending->value);
  if (prepared_) keep.insert(prepared_->source_session.value);

  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir_ / "sessions", ec)) {
    if (!keep.count(entry.path().filename().string())) {
      fs::remove_all(entry.path(), ec);
    }
  }
}

SessionId TraceStore::begin_session(TimeMs now) {
  std::lock_guard lock(mu_);
  if (state_.live) {
    throw Error(ErrorCode::SessionAlreadyLive, "session " + state_.live->value + " is still live");
  }
  SessionId id = make_id(state_.next_id++);
  fs::create_directories(session_dir(id));
  SessionRecord r;
  r.id = id;
  r.started_at = now;
  write_atomic(session_dir(id) / "meta.json", meta_doc(r).dump());
  state_.live = id;
  last_bpm_t_.reset();
  last_stretch_t_.reset();
  save_state();
  return id;
}

void TraceStore::require_live(const SessionId& id) const {
  if (!state_.live || *state_.live != id) {
    throw Error(ErrorCode::SessionNotLive, "session " + id.value + " is not live");
  }
}

namespace {

template <typename Sample>
void append_checked(const fs::path& file, std::span<const Sample> samples, std::optional<TimeMs>& last) {
  std::optional<TimeMs> cursor = last;
  for (const auto& s : samples) {
    if (cursor && s.t < *cursor) {
      throw Error(ErrorCode::NonMonotonicTime,
                  "sample at " + std::to_string(s.t) + " precedes stored " + std::to_string(*cursor));
    }
    cursor = s.t;
  }
  if (samples.empty()) return;
  std::ofstream out(file, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + file.string());
  out << to_lines(samples);
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "short write to " + file.string());
  last = cursor;
}

}  // namespace

std::size_t TraceStore::append(const SessionId& id, std::span<const BpmSample> samples) {
  std::lock_guard lock(mu_);
  require_live(id);
  append_checked(session_dir(id) / "bpm.csv", samples, last_bpm_t_);
  return samples.size();
}

std::size_t TraceStore::append(const SessionId& id, std::span<const StretchSample> samples) {
  std::lock_guard lock(mu_);
  require_live(id);
  append_checked(session_dir(id) / "stretch.csv", samples, last_stretch_t_);
  return samples.size();
}

SessionRecord TraceStore::finalize_session(const SessionId& id, TimeMs now) {
  std::lock_guard lock(mu_);
  require_live(id);
  SessionRecord record = load_locked(id);
  if (now <= record.started_at) {
    throw Error(ErrorCode::InvalidParams, "session must end after it starts");
  }
  record.ended_at = now;
  write_atomic(session_dir(id) / "meta.json", meta_doc(record).dump());

  state_.live.reset();
  state_.pending = id;
  // The trace replayed during this session has now been used up.
  if (prepared_ && prepared_->consumed) {
    prepared_.reset();
    save_prepared();
  }
  save_state();
  enforce_retention();
  return record;
}

void TraceStore::install_prepared(PreparedTrace trace) {
  if (trace.consumed) {
    throw Error(ErrorCode::InvalidParams, "cannot install a consumed trace");
  }
  trace.schedule.validate();
  std::lock_guard lock(mu_);
  prepared_ = std::move(trace);
  state_.pending.reset();
  save_prepared();
  save_state();
  enforce_retention();
}

std::optional<PreparedTrace> TraceStore::take_prepared() {
  std::lock_guard lock(mu_);
  if (!prepared_ || prepared_->consumed) return std::nullopt;
  prepared_->consumed = true;
  save_prepared();
  return *prepared_;
}

bool TraceStore::has_prepared() const {
  std::lock_guard lock(mu_);
  return prepared_ && !prepared_->consumed;
}

std::optional<PreparedTrace> TraceStore::peek_prepared() const {
  std::lock_guard lock(mu_);
  return prepared_;
}

std::optional<SessionId> TraceStore::live_session() const {
  std::lock_guard lock(mu_);
  return state_.live;
}

std::optional<SessionId> TraceStore::predecessor() const {
  std::lock_guard lock(mu_);
  if (state_.pending) return state_.pending;
  if (prepared_ && fs::exists(session_dir(prepared_->source_session))) return prepared_->source_session;
  return std::nullopt;
}

SessionRecord TraceStore::load_locked(const SessionId& id) const {
  const auto sdir = session_dir(id);
  if (!fs::exists(sdir / "meta.json")) {
    const auto n = parse_session_number(id);
    if (n && *n >= 1 && *n < state_.next_id) {
      throw Error(ErrorCode::SessionPurged, "session " + id.value + " was discarded after use");
    }
    throw Error(ErrorCode::SessionNotFound, "no session " + id.value);
  }
  SessionRecord r;
  try {
    const auto meta = json::parse(read_file(sdir / "meta.json"));
    r.id = {meta.at("id").get<std::string>()};
    r.started_at = meta.at("started_at").get<TimeMs>();
    if (!meta.at("ended_at").is_null()) r.ended_at = meta.at("ended_at").get<TimeMs>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::StoreCorrupt, "meta for " + id.value + ": " + e.what());
  }
  r.bpm = read_log<BpmSample>(sdir / "bpm.csv");
  r.stretch = read_log<StretchSample>(sdir / "stretch.csv");
  return r;
}

SessionRecord TraceStore::load(const SessionId& id) const {
  std::lock_guard lock(mu_);
  return load_locked(id);
}

std::vector<SessionId> TraceStore::retained_sessions() const {
  std::lock_guard lock(mu_);
  std::vector<SessionId> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir_ / "sessions", ec)) {
    out.push_back({entry.path().filename().string()});
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string bpm_csv(const SessionRecord& record) {
  return "t_ms,bpm\n" + to_lines<BpmSample>(record.bpm);
}

std::string stretch_csv(const SessionRecord& record) {
  return "t_ms,stretch\n" + to_lines<StretchSample>(record.stretch);
}

}  // namespace heartsway::store
