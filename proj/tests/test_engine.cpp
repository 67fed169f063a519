#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "heartsway/engine.hpp"
#include "heartsway/error.hpp"
#include "heartsway/simulation.hpp"
#include "support/triad.hpp"

using namespace heartsway;
using namespace heartsway::session;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("hs-engine-" + std::to_string(::getpid()) + "-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Backend wrapper that can be told to fail.
class FlakyBackend final : public device::Backend {
 public:
  explicit FlakyBackend(device::Backend& inner) : inner_(inner) {}
  std::optional<TimeMs> fail_reads_after;

  double read_distance_cm(TimeMs now) override { return inner_.read_distance_cm(now); }
  void start_sensors(TimeMs now) override { inner_.start_sensors(now); }
  void stop_sensors(TimeMs now) override { inner_.stop_sensors(now); }
  std::vector<BpmSample> read_pulse(TimeMs now) override {
    if (fail_reads_after && now >= *fail_reads_after) throw Error(ErrorCode::LinkClosed, "cable pulled");
    return inner_.read_pulse(now);
  }
  std::vector<StretchSample> read_stretch(TimeMs now) override { return inner_.read_stretch(now); }
  TimeMs actuate(const device::Actuation& a, TimeMs now) override { return inner_.actuate(a, now); }
  std::size_t load_schedule(const replay::ReplaySchedule& s, TimeMs now) override {
    return inner_.load_schedule(s, now);
  }
  void close() override { inner_.close(); }
  bool is_closed() const override { return inner_.is_closed(); }

 private:
  device::Backend& inner_;
};

struct Rig {
  TempDir dir;
  VirtualClock clock{0};
  EventBus bus{1u << 20};
  std::unique_ptr<store::TraceStore> store;
  std::unique_ptr<device::SimulatedBackend> sim;
  std::unique_ptr<FlakyBackend> backend;
  std::unique_ptr<Engine> engine;

  explicit Rig(const std::string& scenario, std::function<void(EngineConfig&)> tweak = {}) {
    store = std::make_unique<store::TraceStore>(dir.path);
    sim = std::make_unique<device::SimulatedBackend>(
        scenario.empty() ? device::Scenario{} : device::parse_scenario(kv::parse(scenario)));
    sim->set_log_distance(false);
    backend = std::make_unique<FlakyBackend>(*sim);
    auto cfg = triad::config_for(dir.path);
    if (tweak) tweak(cfg);
    engine = std::make_unique<Engine>(cfg, *backend, *store, clock, bus);
  }

  void run_to(TimeMs t) { engine->run_virtual(clock, t); }

  CommandResult command(Command c) {
    auto fut = engine->submit(std::move(c));
    engine->tick();
    return fut.get();
  }

  std::vector<std::pair<ApiEvent, json>> events(EventKind kind) const {
    std::vector<std::pair<ApiEvent, json>> out;
    for (const auto& e : bus.since(1))
      if (e.kind == kind) out.emplace_back(e, json::parse(e.detail));
    return out;
  }

  std::vector<json> phases() const {
    std::vector<json> out;
    for (auto& [e, d] : events(EventKind::PhaseChanged)) out.push_back(d);
    return out;
  }
};

constexpr const char* kPair = R"(
[occupant]
arrive_ms = 1000
duration_ms = 120000
seed = 1
movements_ms = 60000

[occupant]
gap_before_ms = 20000
duration_ms = 200000
seed = 2
bpm.baseline = 70
)";

TimeMs started_at(const Rig& r, std::size_t nth) {
  std::size_t n = 0;
  for (const auto& d : r.phases()) {
    if (d["to"] == "Occupied" && n++ == nth) return d["started_at"].get<TimeMs>();
  }
  ADD_FAILURE() << "no session " << nth;
  return 0;
}

bool has_key(const json& j, const std::string& needle) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key().find(needle) != std::string::npos || has_key(it.value(), needle)) return true;
    }
  } else if (j.is_array()) {
    for (const auto& v : j) {
      if (has_key(v, needle)) return true;
    }
  }
  return false;
}

}  // namespace

TEST(WozCues, FollowLoopsAndStopAtEnd) {
  replay::ReplaySchedule s;
  s.loop_period_ms = 120000;
  s.swing_offsets_ms = {60000};
  const auto cues = woz_cues(s, 1000, 1000 + 180000, 3000);
  ASSERT_EQ(cues.size(), 2u);
  EXPECT_EQ(cues[0].due_at, 61000);
  EXPECT_EQ(cues[0].issue_at, 58000);
  EXPECT_EQ(cues[1].due_at, 181000);
  EXPECT_EQ(cues[1].id, 2u);
  EXPECT_EQ(woz_cues(s, 1000, 1000 + 179999, 3000).size(), 1u);
  // no swings, no cues
  s.swing_offsets_ms.clear();
  s.beat_offsets_ms = {1000};
  EXPECT_TRUE(woz_cues(s, 0, 1000000, 3000).empty());
}

TEST(WozCues, Lateness) {
  EXPECT_FALSE(ack_lateness(10000, 10400, 1000));
  EXPECT_FALSE(ack_lateness(10000, 11000, 1000));
  EXPECT_EQ(ack_lateness(10000, 11001, 1000), 1001);
  EXPECT_FALSE(ack_lateness(10000, 9000, 1000));
}

TEST(Commands, Parse) {
  EXPECT_EQ(std::get<AckCue>(parse_command(R"({"type":"AckCue","id":3})")).id, 3u);
  EXPECT_EQ(std::get<OverridePresence>(parse_command(R"({"type":"OverridePresence","state":"Occupied"})")).state,
            device::Presence::Occupied);
  EXPECT_FALSE(std::get<OverridePresence>(parse_command(R"({"type":"OverridePresence","state":null})")).state);
  EXPECT_EQ(std::get<LoadSeedTrace>(parse_command(R"({"type":"LoadSeedTrace","path":"/x"})")).path, "/x");
  EXPECT_TRUE(std::holds_alternative<Shutdown>(parse_command(R"({"type":"Shutdown"})")));
  for (const char* bad : {"", "[]", "{}", R"({"type":"AckCue"})", R"({"type":"Dance"})",
                          R"({"type":"OverridePresence","state":"Maybe"})"}) {
    try {
      parse_command(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ParseError) << bad;
    }
  }
}

TEST(Engine, FirstOccupantIsSilent) {
  Rig r(kPair);
  r.run_to(140000);
  EXPECT_TRUE(r.events(EventKind::PagesSent).empty());
  EXPECT_TRUE(r.events(EventKind::BeatFired).empty());
  const auto ph = r.phases();
  ASSERT_GE(ph.size(), 3u);
  EXPECT_EQ(ph[0]["to"], "Occupied");
  EXPECT_EQ(ph[1]["to"], "Preparing");
  EXPECT_EQ(ph[1]["reason"], "vacant");
  EXPECT_EQ(ph[2]["to"], "Idle");
  // left at ~121000 plus the 10 s grace
  const auto prepared = r.store->peek_prepared();
  ASSERT_TRUE(prepared);
  EXPECT_NEAR(static_cast<double>(prepared->schedule.loop_period_ms), 120000, 1000);
  EXPECT_EQ(prepared->schedule.swing_offsets_ms.size(), 1u);
}

TEST(Engine, SecondOccupantFeelsTheFirst) {
  Rig r(kPair);
  r.run_to(420000);
  const auto sent = r.events(EventKind::PagesSent);
  ASSERT_EQ(sent.size(), 1u);
  const auto a_id = r.phases()[0]["session"].get<std::string>();
  EXPECT_EQ(sent[0].second["source_session"], a_id);
  EXPECT_EQ(sent[0].second["swings"], 1);

  const TimeMs b0 = started_at(r, 1);
  const auto swings = triad::times(triad::Run{r.sim->io_log(), {}, {}, {}, 0}, "swing", 0, 1 << 30);
  ASSERT_EQ(swings.size(), 2u);  // loop 0 and loop 1, B stays 200 s
  EXPECT_NEAR(static_cast<double>(swings[0] - b0), 60000, 20);
  // A's loop is its presence time, 120 s plus the debounce slack
  const auto a = r.phases()[1];
  const TimeMs loop = a["duration_ms"].get<TimeMs>();
  EXPECT_NEAR(static_cast<double>(loop), 120000, 1000);
  EXPECT_NEAR(static_cast<double>(swings[1] - b0), 60000 + loop, 20);
}

TEST(Engine, LoopIndexAfterOneLoop) {
  Rig r(kPair);
  r.run_to(150000);
  const TimeMs b0 = started_at(r, 1);
  r.run_to(b0 + 121000);
  // the beat at offset 1000 of the second loop fires at 121 s
  bool found = false;
  for (auto& [e, d] : r.events(EventKind::BeatFired)) {
    if (d["due_at"] == b0 + 121000) {
      EXPECT_EQ(d["loop_index"], 1);
      EXPECT_EQ(d["offset_ms"], 1000);
      found = true;
    }
  }
  EXPECT_TRUE(found);
  r.clock.set(b0 + 121000);
  const auto snap = r.engine->snapshot();
  ASSERT_TRUE(snap.replay);
  EXPECT_EQ(snap.replay->loop_index, 1);
  EXPECT_EQ(snap.phase, Phase::Occupied);
}

TEST(Engine, SnapshotIsStableAndHoldsNoBiodata) {
  Rig r(kPair);
  auto idle = json::parse(to_json(r.engine->snapshot()));
  EXPECT_EQ(idle["phase"], "Idle");
  EXPECT_EQ(idle["prepared"], false);

  r.run_to(220000);
  const auto a = to_json(r.engine->snapshot());
  const auto b = to_json(r.engine->snapshot());
  EXPECT_EQ(a, b);
  const auto j = json::parse(a);
  EXPECT_EQ(j["phase"], "Occupied");
  EXPECT_FALSE(j["replay"].is_null());
  EXPECT_FALSE(has_key(j, "bpm"));
  EXPECT_FALSE(has_key(j, "stretch"));
  EXPECT_FALSE(has_key(j, "value"));
}

TEST(Engine, ShortAbsenceIsOneSession) {
  Rig r(R"(
[occupant]
arrive_ms = 1000
duration_ms = 60000
presence_gaps = 20000+4000
)");
  r.run_to(90000);
  const auto ph = r.phases();
  std::size_t occupied = 0;
  for (const auto& d : ph) occupied += d["to"] == "Occupied";
  EXPECT_EQ(occupied, 1u);
  // sensors paused during the gap, resumed afterwards
  std::size_t off = 0, on = 0;
  for (const auto& e : r.sim->io_log()) {
    off += e.channel == "sensors_off";
    on += e.channel == "sensors_on";
  }
  EXPECT_EQ(on, 2u);
  EXPECT_EQ(off, 2u);
  EXPECT_TRUE(triad::gating_violations(triad::Run{r.sim->io_log(), r.bus.since(1), {}, {}, 0}).empty());
}

TEST(Engine, LongAbsenceSplitsSessions) {
  Rig r(R"(
[occupant]
arrive_ms = 1000
duration_ms = 60000
presence_gaps = 20000+15000
)");
  r.run_to(90000);
  std::size_t occupied = 0;
  for (const auto& d : r.phases()) occupied += d["to"] == "Occupied";
  EXPECT_EQ(occupied, 2u);
}

TEST(Engine, RejoinSkipsMissedReplay) {
  Rig r(std::string(kPair) + "presence_gaps = 30000+5000\n");
  r.run_to(420000);
  const TimeMs b0 = started_at(r, 1);
  // no beat fired while B was away (left ~b0+30000, back ~b0+35000)
  for (auto& [e, d] : r.events(EventKind::BeatFired)) {
    const auto due = d["due_at"].get<TimeMs>();
    EXPECT_FALSE(due > b0 + 30700 && due < b0 + 35000) << due;
  }
}

TEST(Engine, MaxLengthFinalizesAndWaitsForVacancy) {
  Rig r(R"(
[occupant]
arrive_ms = 1000
duration_ms = 150000

[occupant]
gap_before_ms = 5000
duration_ms = 20000
)",
        [](EngineConfig& c) { c.max_session_ms = 60000; });
  r.run_to(200000);
  std::vector<json> ends;
  std::size_t occupied = 0;
  for (const auto& d : r.phases()) {
    occupied += d["to"] == "Occupied";
    if (d["from"] == "Occupied") ends.push_back(d);
  }
  ASSERT_EQ(occupied, 2u);  // not restarted while the first occupant lingered
  EXPECT_EQ(ends[0]["reason"], "max_length");
  EXPECT_EQ(ends[0]["duration_ms"], 60000);
  // nothing touched after the cap while the same person stays
  const TimeMs cap = started_at(r, 0) + 60000;
  const TimeMs second = started_at(r, 1);
  for (const auto& e : r.sim->io_log()) {
    if (e.channel == "pulse" || e.channel == "stretch") EXPECT_FALSE(e.t > cap && e.t < second) << e.t;
  }
}

TEST(Engine, OverrideDrivesPresence) {
  Rig r("");
  EXPECT_TRUE(r.command(OverridePresence{device::Presence::Occupied}).accepted);
  r.run_to(2000);
  auto snap = r.engine->snapshot();
  EXPECT_EQ(snap.phase, Phase::Occupied);
  EXPECT_EQ(snap.presence_override, device::Presence::Occupied);
  EXPECT_TRUE(snap.session);
  EXPECT_EQ(r.events(EventKind::PresenceChanged)[0].second["source"], "override");

  EXPECT_TRUE(r.command(OverridePresence{device::Presence::Vacant}).accepted);
  r.run_to(5000);
  EXPECT_TRUE(r.engine->snapshot().rejoin_deadline);
  r.run_to(20000);
  snap = r.engine->snapshot();
  EXPECT_EQ(snap.phase, Phase::Idle);
  EXPECT_FALSE(snap.session);
  EXPECT_EQ(snap.sessions_completed, 1u);
}

TEST(Engine, SeedTraceBecomesFirstReplay) {
  Rig r(kPair);
  const auto path = r.dir.path / "seed.csv";
  std::ofstream(path) << "kind,offset_ms\nbeat,500\nswing,2000\nbeat,3000\nend,4000\n";
  const auto res = r.command(LoadSeedTrace{path.string()});
  EXPECT_TRUE(res.accepted) << res.message;
  EXPECT_TRUE(r.engine->snapshot().prepared);
  r.run_to(20000);
  const auto sent = r.events(EventKind::PagesSent);
  ASSERT_EQ(sent.size(), 1u);
  EXPECT_EQ(sent[0].second["source_session"], "seed");
  EXPECT_GE(r.events(EventKind::SwingFired).size(), 4u);

  // only while Idle
  const auto busy = r.command(LoadSeedTrace{path.string()});
  EXPECT_FALSE(busy.accepted);
  EXPECT_EQ(busy.error, ErrorCode::InvalidPhase);
}

TEST(Engine, SeedTraceFromConfigAndBadPath) {
  TempDir seeds;
  const auto path = seeds.path / "seed.json";
  replay::ReplaySchedule s;
  s.source_session = SessionId{"lead-author"};
  s.loop_period_ms = 10000;
  s.beat_offsets_ms = {1000, 2000};
  std::ofstream(path) << replay::to_json(s);

  Rig r(kPair, [&](EngineConfig& c) { c.seed_trace = path.string(); });
  r.run_to(5000);
  ASSERT_EQ(r.events(EventKind::PagesSent).size(), 1u);
  EXPECT_EQ(r.events(EventKind::PagesSent)[0].second["source_session"], "lead-author");

  Rig other("");
  const auto res = other.command(LoadSeedTrace{"/nonexistent/seed.csv"});
  EXPECT_FALSE(res.accepted);
  EXPECT_EQ(res.error, ErrorCode::Io);
}

TEST(Engine, WozIssuesCuesInsteadOfSwings) {
  Rig r(kPair, [](EngineConfig& c) { c.woz_mode = true; });
  r.run_to(150000);
  const TimeMs b0 = started_at(r, 1);
  r.run_to(b0 + 57100);
  auto issued = r.events(EventKind::CueIssued);
  ASSERT_EQ(issued.size(), 1u);
  const auto due = issued[0].second["due_at"].get<TimeMs>();
  EXPECT_NEAR(static_cast<double>(due - b0), 60000, 1);
  EXPECT_LE(issued[0].first.t, due - 3000);
  EXPECT_EQ(r.engine->snapshot().pending_cues.size(), 1u);

  // acknowledge shortly after the swing was due: within tolerance
  r.run_to(due + 300);
  const auto id = issued[0].second["id"].get<std::uint64_t>();
  const auto ack = r.command(AckCue{id});
  EXPECT_TRUE(ack.accepted);
  auto acked = r.events(EventKind::CueAcked);
  ASSERT_EQ(acked.size(), 1u);
  EXPECT_TRUE(acked[0].second["late_by_ms"].is_null());
  EXPECT_EQ(r.command(AckCue{id}).error, ErrorCode::UnknownCue);

  // the second-loop cue goes unanswered
  r.run_to(420000);
  const auto late = r.events(EventKind::CueLate);
  ASSERT_EQ(late.size(), 1u);
  EXPECT_GT(late[0].second["late_by_ms"].get<TimeMs>(), 1000);
  EXPECT_LE(late[0].second["late_by_ms"].get<TimeMs>(), 1200);

  std::size_t wire_swings = 0;
  for (const auto& e : r.sim->io_log()) wire_swings += e.channel == "swing";
  EXPECT_EQ(wire_swings, 0u);
  for (auto& [e, d] : r.events(EventKind::SwingFired)) EXPECT_EQ(d["woz"], true);
}

TEST(Engine, LateAckRecordsLateness) {
  Rig r(kPair, [](EngineConfig& c) { c.woz_mode = true; });
  r.run_to(150000);
  const TimeMs b0 = started_at(r, 1);
  r.run_to(b0 + 63000);
  const auto issued = r.events(EventKind::CueIssued);
  ASSERT_FALSE(issued.empty());
  const auto ack = r.command(AckCue{issued[0].second["id"].get<std::uint64_t>()});
  EXPECT_TRUE(ack.accepted);
  const auto acked = r.events(EventKind::CueAcked);
  ASSERT_EQ(acked.size(), 1u);
  EXPECT_GE(acked[0].second["late_by_ms"].get<TimeMs>(), 3000);
}

TEST(Engine, AutomaticModeIssuesNoCues) {
  Rig r(kPair);
  r.run_to(420000);
  EXPECT_TRUE(r.events(EventKind::CueIssued).empty());
  for (auto& [e, d] : r.events(EventKind::SwingFired)) EXPECT_EQ(d["woz"], false);
}

TEST(Engine, ShutdownFinalizesLiveSession) {
  Rig r(kPair);
  r.run_to(50000);
  ASSERT_TRUE(r.store->live_session());
  const auto id = *r.store->live_session();
  r.engine->shutdown();
  EXPECT_FALSE(r.store->live_session());
  const auto ph = r.phases();
  bool saw = false;
  for (const auto& d : ph) saw |= d.value("reason", "") == "shutdown";
  EXPECT_TRUE(saw);
  ASSERT_TRUE(r.store->peek_prepared());
  EXPECT_EQ(r.store->peek_prepared()->source_session, id);
  EXPECT_EQ(r.engine->snapshot().phase, Phase::Idle);
}

TEST(Engine, ShutdownCommandStopsVirtualRun) {
  Rig r(kPair);
  r.run_to(10000);
  r.engine->submit(Shutdown{});
  r.run_to(1000000);
  EXPECT_TRUE(r.engine->stop_requested());
  EXPECT_LT(r.clock.now_ms(), 20000);
}

TEST(Engine, FailSafeForcesIdle) {
  Rig r(kPair);
  r.backend->fail_reads_after = 30000;
  r.run_to(60000);
  const auto errs = r.events(EventKind::Error);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_NE(errs[0].second["message"].get<std::string>().find("cable pulled"), std::string::npos);
  EXPECT_EQ(r.engine->snapshot().phase, Phase::Idle);
  EXPECT_FALSE(r.store->live_session());
  // the occupant is still there; nothing restarts until they leave
  std::size_t occupied = 0;
  for (const auto& d : r.phases()) occupied += d["to"] == "Occupied";
  EXPECT_EQ(occupied, 1u);
}

TEST(Engine, RecoversInterruptedSessionOnStart) {
  TempDir dir;
  SessionId crashed;
  {
    store::TraceStore s(dir.path);
    crashed = s.begin_session(1000);
    std::vector<BpmSample> b;
    for (int i = 1; i <= 30; ++i) b.push_back({1000 + i * 1000, 60});
    s.append(crashed, b);
  }
  store::TraceStore store(dir.path);
  VirtualClock clock(100000);
  device::SimulatedBackend sim(device::Scenario{});
  EventBus bus;
  Engine engine(triad::config_for(dir.path), sim, store, clock, bus);
  engine.run_virtual(clock, 101000);
  const auto p = store.peek_prepared();
  ASSERT_TRUE(p);
  EXPECT_EQ(p->source_session, crashed);
  EXPECT_EQ(p->schedule.loop_period_ms, 30000);
}

TEST(Engine, TriadChain) {
  TempDir dir;
  const auto run = triad::run(dir.path);
  ASSERT_EQ(run.sessions.size(), 3u);
  EXPECT_EQ(run.sessions[0].replay_source, "");
  EXPECT_EQ(run.sessions[1].replay_source, run.sessions[0].id);
  EXPECT_EQ(run.sessions[2].replay_source, run.sessions[1].id);
  EXPECT_TRUE(triad::gating_violations(run).empty());
  store::TraceStore store(dir.path);
  EXPECT_EQ(store.retained_sessions(), std::vector<SessionId>{SessionId{run.sessions[2].id}});
}
