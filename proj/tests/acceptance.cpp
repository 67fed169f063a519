// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// failed. Needs no network and no console; the CLI binary is invoked for the
// criteria that are about its output.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "heartsway/error.hpp"
#include "heartsway/replay.hpp"
#include "heartsway/signal.hpp"
#include "heartsway/tracestore.hpp"
#include "heartsway/wire.hpp"
#include "support/oracles.hpp"
#include "support/triad.hpp"

namespace fs = std::filesystem;
using namespace heartsway;
using Wall = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

double seconds_since(Wall::time_point t0) { return std::chrono::duration<double>(Wall::now() - t0).count(); }

std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args) {
  CliResult r;
  FILE* p = ::popen((std::string(HEARTSWAY_CLI) + " " + args + " 2>&1").c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

// ---------------------------------------------------------------- signal

void pelt_oracle() {
  const auto t0 = Wall::now();
  std::mt19937_64 rng(2024);
  int compared = 0, mismatches = 0;
  std::string first_bad;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng() % 59;
    std::vector<double> x(n);
    for (auto& v : x) v = static_cast<double>(rng() % 10);
    for (double pen : {1.0, 10.0, 100.0}) {
      const double bw = oracle::median_bandwidth(x);
      const auto got = signal::pelt_changepoints(x, {pen, std::nullopt});
      const auto want = oracle::optimal_partitioning(x, pen, bw);
      ++compared;
      const bool same = got == want &&
                        oracle::tied(oracle::penalized_cost(x, got, pen, bw), oracle::penalized_cost(x, want, pen, bw));
      if (!same && mismatches++ == 0) first_bad = "series " + std::to_string(i) + " penalty " + fmt(pen, 0);
    }
  }
  const double secs = seconds_since(t0);
  report("pelt-oracle", mismatches == 0 && secs < 60.0,
         std::to_string(compared - mismatches) + "/" + std::to_string(compared) + " exact matches in " + fmt(secs) +
             " s" + (first_bad.empty() ? "" : ", first mismatch " + first_bad));
}

void filter_oracle() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> noise(0.0, 5.0);
  int matches = 0;
  std::size_t removed = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 150 + rng() % 151;
    std::vector<double> x(n);
    double level = 300.0;
    for (auto& v : x) {
      if (rng() % 60 == 0) level += static_cast<double>(rng() % 80) - 40.0;
      v = level + noise(rng);
      if (rng() % 25 == 0) v += (rng() % 2 ? 1.0 : -1.0) * (30.0 + static_cast<double>(rng() % 50));
    }
    const signal::FilterParams p;
    const auto got = signal::rolling_outlier_filter(x, p);
    const auto want = oracle::outlier_indices(x, p.window, p.k_sigma, p.min_window);
    if (got.removed_indices == want) ++matches;
    removed += want.size();
  }
  report("filter-oracle", matches == 100,
         std::to_string(matches) + "/100 removal sets identical (" + std::to_string(removed) + " removals)");
}

// ---------------------------------------------------------------- config

void parameter_fidelity() {
  const auto r = cli("config print-defaults");
  std::vector<std::string> missing;
  for (const char* line : {"filter.window = 100", "filter.k_sigma = 3", "pelt.penalty = 10", "replay.page_size = 30",
                           "sensors.stretch_period_ms = 1000", "vibration.strength = 0.40",
                           "vibration.duration_ms = 100"}) {
    if (r.out.find(std::string(line) + "\n") == std::string::npos) missing.push_back(line);
  }
  std::string detail = "exit " + std::to_string(r.code);
  for (const auto& m : missing) detail += ", missing '" + m + "'";
  if (missing.empty()) detail += ", all defaults present";
  report("parameter-fidelity", r.code == 0 && missing.empty(), detail);
}

// ---------------------------------------------------------------- end to end

// Offsets of `offsets` (looped by `loop`) that fall in [0, span).
std::vector<TimeMs> expected_within(const std::vector<TimeMs>& offsets, TimeMs loop, TimeMs span) {
  std::vector<TimeMs> out;
  for (TimeMs base = 0; base < span; base += loop)
    for (auto o : offsets)
      if (base + o < span) out.push_back(base + o);
  std::sort(out.begin(), out.end());
  return out;
}

bool near_any(TimeMs t, const std::vector<TimeMs>& targets, TimeMs tol) {
  for (auto x : targets)
    if (std::abs(t - x) <= tol) return true;
  return false;
}

void triad_criteria(const fs::path& dir) {
  const auto run = triad::run(dir);

  // end-to-end triad
  {
    std::vector<std::string> problems;
    auto fail = [&](std::string s) { problems.push_back(std::move(s)); };
    if (run.sessions.size() != 3) fail(std::to_string(run.sessions.size()) + " sessions instead of 3");
    std::size_t b_pulses = 0, b_swings = 0, c_swings = 0;
    if (run.sessions.size() == 3 && run.sessions[1].ended_at && run.sessions[2].ended_at) {
      const auto& a = run.sessions[0];
      const auto& b = run.sessions[1];
      const auto& c = run.sessions[2];
      if (b.replay_source != a.id) fail("B replayed '" + b.replay_source + "'");
      if (c.replay_source != b.id) fail("C replayed '" + c.replay_source + "'");

      const auto sa = run.schedules.find(a.id);
      const auto sb = run.schedules.find(b.id);
      if (sa == run.schedules.end() || sb == run.schedules.end()) {
        fail("prepared schedules not observed");
      } else {
        const auto& A = sa->second;
        // A was recorded with posture changes at 60 s and 200 s
        if (A.swing_offsets_ms.size() != 2 || std::abs(A.swing_offsets_ms[0] - 60000) > 20 ||
            std::abs(A.swing_offsets_ms[1] - 200000) > 20)
          fail("A's swing offsets are not {60000, 200000}");

        const TimeMs b_span = *b.ended_at - b.started_at;
        const auto want_swings = expected_within(A.swing_offsets_ms, A.loop_period_ms, b_span);
        const auto swings = triad::times(run, "swing", b.started_at, *b.ended_at);
        b_swings = swings.size();
        if (swings.size() != want_swings.size()) {
          fail("B felt " + std::to_string(swings.size()) + " swings, expected " + std::to_string(want_swings.size()));
        } else {
          for (std::size_t i = 0; i < swings.size(); ++i)
            if (std::abs(swings[i] - b.started_at - want_swings[i]) > 20)
              fail("swing " + std::to_string(i) + " off by " +
                   std::to_string(swings[i] - b.started_at - want_swings[i]) + " ms");
          if (want_swings.size() != 2) fail("B's stay does not cover both of A's swings");
        }

        const auto want_beats = expected_within(A.beat_offsets_ms, A.loop_period_ms, b_span);
        const auto pulses = triad::times(run, "vibrate", b.started_at, *b.ended_at);
        b_pulses = pulses.size();
        if (pulses.size() != want_beats.size())
          fail("B felt " + std::to_string(pulses.size()) + " beat pulses, expected " +
               std::to_string(want_beats.size()));
        for (std::size_t i = 1; i < pulses.size(); ++i)
          if (std::abs(pulses[i] - pulses[i - 1] - 1000) > 20) {
            fail("pulse spacing " + std::to_string(pulses[i] - pulses[i - 1]) + " ms at " + std::to_string(i));
            break;
          }

        // C feels B's posture changes and nothing of A's
        const auto& B = sb->second;
        const TimeMs c_span = *c.ended_at - c.started_at;
        const auto from_b = expected_within(B.swing_offsets_ms, B.loop_period_ms, c_span);
        const auto from_a = expected_within(A.swing_offsets_ms, A.loop_period_ms, c_span);
        const auto cs = triad::times(run, "swing", c.started_at, *c.ended_at);
        c_swings = cs.size();
        if (cs.empty()) fail("C felt no swings");
        for (auto t : cs) {
          if (!near_any(t - c.started_at, from_b, 20)) fail("C swing at +" + std::to_string(t - c.started_at));
          if (near_any(t - c.started_at, from_a, 20) && !near_any(t - c.started_at, from_b, 20))
            fail("C felt A's swing at +" + std::to_string(t - c.started_at));
        }
      }
    }
    std::string detail = "B: " + std::to_string(b_pulses) + " beat pulses, " + std::to_string(b_swings) +
                         " swings; C: " + std::to_string(c_swings) + " swings from B";
    for (const auto& p : problems) detail += "; " + p;
    report("e2e-triad", problems.empty(), detail);
    report("e2e-triad-runtime", run.wall_seconds < 10.0, fmt(run.wall_seconds) + " s wall clock (limit 10 s)");
  }

  // ephemerality
  {
    std::vector<std::string> problems;
    if (run.sessions.empty()) {
      problems.push_back("no sessions ran");
    } else {
      const std::string a_id = run.sessions[0].id;
      for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.path().string().find(a_id) != std::string::npos) problems.push_back("left behind " + e.path().string());
      try {
        store::TraceStore store(dir);
        store.load(SessionId{a_id});
        problems.push_back("load(" + a_id + ") succeeded");
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SessionPurged) problems.push_back(std::string("load threw ") + e.what());
      }
      const auto r = cli("export " + a_id + " --data-dir " + dir.string() + " -o " + (dir / "export").string());
      if (r.code != 4 || r.out.find("SessionPurged") == std::string::npos)
        problems.push_back("cli export exited " + std::to_string(r.code) + ": " + r.out);
    }
    std::string detail = problems.empty() ? "no trace of A on disk, load and export report SessionPurged" : "";
    for (const auto& p : problems) detail += p + "; ";
    report("ephemerality", problems.empty(), detail);
  }

  // presence gating
  {
    const auto bad = triad::gating_violations(run);
    std::size_t reads = 0, vacancies = 0;
    for (const auto& e : run.io)
      if (e.channel == "pulse" || e.channel == "stretch") ++reads;
    for (const auto& e : run.events)
      if (e.kind == EventKind::PresenceChanged && e.detail.find("Vacant") != std::string::npos) ++vacancies;
    std::string detail = std::to_string(bad.size()) + " gated I/O entries while vacant (" + std::to_string(reads) +
                         " sensor reads, " + std::to_string(vacancies) + " vacancies over " +
                         std::to_string(run.sessions.size()) + " sessions)";
    if (!bad.empty()) detail += ", first " + bad.front().channel + " at " + std::to_string(bad.front().t);
    report("presence-gating", bad.empty() && reads > 0 && run.sessions.size() >= 3, detail);
  }
}

// ---------------------------------------------------------------- replay

void pagination_and_loop() {
  std::mt19937_64 rng(5);
  int bad_lists = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<TimeMs> v(rng() % 400);
    for (auto& t : v) t = static_cast<TimeMs>(rng() % 3'600'000);
    std::sort(v.begin(), v.end());
    const auto pages = replay::paginate(v);
    std::vector<TimeMs> joined;
    bool ok = true;
    for (std::size_t p = 0; p < pages.size(); ++p) {
      joined.insert(joined.end(), pages[p].offsets.begin(), pages[p].offsets.end());
      const auto size = pages[p].offsets.size();
      if (p + 1 < pages.size() ? size != 30 : (size == 0 || size > 30)) ok = false;
      if (pages[p].index != p || pages[p].total != pages.size()) ok = false;
    }
    if (!ok || joined != v) ++bad_lists;
  }

  // two loops through next_event (distinct instants) and the cursor (with ties)
  int bad_walks = 0, bad_cursor = 0;
  for (int i = 0; i < 300; ++i) {
    replay::ReplaySchedule s;
    s.loop_period_ms = 1000 + static_cast<TimeMs>(rng() % 600'000);
    std::set<TimeMs> used;
    const std::size_t nb = rng() % 80, ns = rng() % 6;
    for (std::size_t k = 0; k < nb + ns; ++k) {
      const TimeMs t = 1 + static_cast<TimeMs>(rng() % (s.loop_period_ms - 1));
      if (!used.insert(t).second) continue;
      (k < nb ? s.beat_offsets_ms : s.swing_offsets_ms).push_back(t);
    }
    std::sort(s.beat_offsets_ms.begin(), s.beat_offsets_ms.end());
    std::sort(s.swing_offsets_ms.begin(), s.swing_offsets_ms.end());
    const std::size_t want = 2 * (s.beat_offsets_ms.size() + s.swing_offsets_ms.size());

    std::size_t fired = 0;
    TimeMs e = 0;
    while (auto up = replay::next_event(s, e)) {
      if (up->event.elapsed_ms >= 2 * s.loop_period_ms) break;
      ++fired;
      e = up->event.elapsed_ms;
    }
    if (fired != want) ++bad_walks;

    // force a Swing/Beat tie and walk the cursor
    if (!s.beat_offsets_ms.empty()) {
      s.swing_offsets_ms.push_back(s.beat_offsets_ms.front());
      std::sort(s.swing_offsets_ms.begin(), s.swing_offsets_ms.end());
      replay::ReplayCursor c(s);
      c.seek_after(-1);
      std::size_t n = 0;
      while (c.peek() && c.peek()->loop_index < 2) {
        c.pop();
        ++n;
      }
      if (n != 2 * (s.beat_offsets_ms.size() + s.swing_offsets_ms.size())) ++bad_cursor;
    }
  }
  report("pagination-loop", bad_lists == 0 && bad_walks == 0 && bad_cursor == 0,
         std::to_string(1000 - bad_lists) + "/1000 lists paginate and rejoin exactly; " +
             std::to_string(300 - bad_walks) + "/300 two-loop walks fire 2(|beats|+|swings|) events; " +
             std::to_string(bad_cursor) + " cursor miscounts with tied events");
}

// ---------------------------------------------------------------- wire

wire::Message random_message(std::mt19937& rng) {
  using namespace wire;
  auto u = [&](std::uint32_t n) { return static_cast<std::uint32_t>(rng() % n); };
  switch (u(10)) {
    case 0: return BpmReport{static_cast<std::uint32_t>(rng()), static_cast<std::uint16_t>(u(65536))};
    case 1: return StretchReport{static_cast<std::uint32_t>(rng()), static_cast<std::uint16_t>(u(65536))};
    case 2: return DistanceReport{static_cast<std::uint16_t>(u(65536))};
    case 3: {
      SchedulePage p{u(2) ? PageKind::Swing : PageKind::Beat, static_cast<std::uint16_t>(u(100)),
                     static_cast<std::uint16_t>(u(100)), {}};
      const auto n = u(31);
      for (std::uint32_t i = 0; i < n; ++i) p.offsets.push_back(static_cast<std::uint32_t>(rng()));
      return p;
    }
    case 4: return Vibrate{static_cast<std::uint8_t>(u(256)), static_cast<std::uint16_t>(u(65536))};
    case 5: return Swing{};
    case 6: return Start{};
    case 7: return Stop{};
    case 8: return Ack{static_cast<std::uint8_t>(u(256))};
    default: return Nack{static_cast<std::uint8_t>(u(256)), static_cast<std::uint8_t>(u(256))};
  }
}

// Controller stand-in that Nacks according to `plan` and otherwise Acks.
class ScriptedLink : public wire::Link {
 public:
  ScriptedLink(VirtualClock& clock, std::function<bool()> nack) : clock_(clock), nack_(std::move(nack)) {}
  std::size_t injected = 0;
  std::size_t frames = 0;

  void send(std::span<const std::uint8_t> frame) override {
    const auto r = wire::decode(frame);
    const auto& d = std::get<wire::Decoded>(r);
    ++frames;
    if (nack_()) {
      ++injected;
      inbox_.push_back({wire::Nack{d.seq, 1}, 0});
    } else {
      inbox_.push_back({wire::Ack{d.seq}, 0});
    }
  }

  std::optional<wire::Decoded> receive(std::chrono::milliseconds timeout) override {
    if (inbox_.empty()) {
      clock_.advance(timeout.count());
      return std::nullopt;
    }
    clock_.advance(1);
    auto d = inbox_.front();
    inbox_.pop_front();
    return d;
  }

 private:
  VirtualClock& clock_;
  std::function<bool()> nack_;
  std::deque<wire::Decoded> inbox_;
};

void wire_fuzz() {
  std::mt19937 rng(99);
  int roundtrip_ok = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto m = random_message(rng);
    const auto seq = static_cast<std::uint8_t>(rng());
    const auto r = wire::decode(wire::encode(m, seq));
    const auto* d = std::get_if<wire::Decoded>(&r);
    std::uint8_t want_seq = seq;
    if (auto* a = std::get_if<wire::Ack>(&m)) want_seq = a->seq;
    if (auto* n = std::get_if<wire::Nack>(&m)) want_seq = n->seq;
    if (d && d->msg == m && d->seq == want_seq) ++roundtrip_ok;
  }

  int rejected = 0;
  for (int i = 0; i < 10000; ++i) {
    auto f = wire::encode(random_message(rng), static_cast<std::uint8_t>(rng()));
    f[rng() % f.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    if (!std::holds_alternative<wire::Decoded>(wire::decode(f))) ++rejected;
  }

  // stop-and-wait: Nack at most twice in a row so every page gets through
  int transfers_ok = 0;
  std::size_t total_nacks = 0;
  for (int i = 0; i < 500; ++i) {
    replay::ReplaySchedule s;
    s.loop_period_ms = 600000;
    const std::size_t nb = rng() % 200, ns = rng() % 40;
    for (std::size_t k = 0; k < nb; ++k) s.beat_offsets_ms.push_back(static_cast<TimeMs>(k * 1000 + 500));
    for (std::size_t k = 0; k < ns; ++k) s.swing_offsets_ms.push_back(static_cast<TimeMs>(k * 10000 + 7));
    const auto pages = wire::schedule_pages(s);

    VirtualClock clock(0);
    int streak = 0;
    ScriptedLink link(clock, [&] {
      const bool n = streak < 2 && rng() % 4 == 0;
      streak = n ? streak + 1 : 0;
      return n;
    });
    std::uint8_t seq = static_cast<std::uint8_t>(rng());
    try {
      const auto rep = wire::transfer_schedule(pages, link, clock, seq);
      if (rep.retransmissions == link.injected && rep.nacks == link.injected &&
          rep.transmissions == pages.size() + link.injected && link.frames == rep.transmissions)
        ++transfers_ok;
    } catch (const Error&) {
    }
    total_nacks += link.injected;
  }

  report("wire-fuzz", roundtrip_ok == 10000 && rejected == 10000 && transfers_ok == 500,
         std::to_string(roundtrip_ok) + "/10000 round trips, " + std::to_string(rejected) +
             "/10000 corruptions rejected, " + std::to_string(transfers_ok) + "/500 uploads with one retransmission per Nack (" +
             std::to_string(total_nacks) + " Nacks)");
}

}  // namespace

int main() {
  const fs::path dir =
      fs::temp_directory_path() / ("hs-acceptance-" + std::to_string(::getpid()) + "-" + std::to_string(std::random_device{}()));
  try {
    pelt_oracle();
    filter_oracle();
    parameter_fidelity();
    triad_criteria(dir);
    pagination_and_loop();
    wire_fuzz();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    ++failures;
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
