#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "heartsway/tracestore.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;  // stdout and stderr together
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(HEARTSWAY_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("hs-cli-" + std::to_string(::getpid()) + "-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void write(const std::string& path, const std::string& body) { std::ofstream(path, std::ios::binary) << body; }

// 120 s at 1 Hz, level 100 then 300 from 60 s, gaussian noise.
std::string two_level_csv() {
  std::mt19937 rng(7);
  std::normal_distribution<double> noise(0.0, 3.0);
  std::ostringstream s;
  s << "t_ms,value\n";
  for (int i = 0; i < 120; ++i) s << i * 1000 << ',' << (i < 60 ? 100.0 : 300.0) + noise(rng) << '\n';
  return s.str();
}

}  // namespace

TEST(Cli, PrintDefaults) {
  const auto r = cli("config print-defaults");
  EXPECT_EQ(r.code, 0) << r.out;
  for (const char* line : {"filter.window = 100", "filter.k_sigma = 3", "pelt.penalty = 10", "replay.page_size = 30",
                           "sensors.stretch_period_ms = 1000", "vibration.strength = 0.40",
                           "vibration.duration_ms = 100", "vibration.motor_rated_rpm = 9000"}) {
    EXPECT_NE(r.out.find(line), std::string::npos) << line;
  }
}

TEST(Cli, ConfigCheckNamesMissingDataDir) {
  TempDir tmp;
  write(tmp / "hs.conf", "filter.window = 50\n");
  const auto r = cli("config check --config " + (tmp / "hs.conf"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("data_dir"), std::string::npos) << r.out;

  const auto ok = cli("config check --config " + (tmp / "hs.conf") + " --data-dir " + (tmp / "data"));
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("filter.window = 50"), std::string::npos);
}

TEST(Cli, UnknownOptionIsConfigError) {
  EXPECT_EQ(cli("analyze --no-such-flag x.csv").code, 2);
  EXPECT_EQ(cli("").code, 2);
}

TEST(Cli, AnalyzeTwoLevels) {
  TempDir tmp;
  write(tmp / "two.csv", two_level_csv());
  const auto r = cli("analyze " + (tmp / "two.csv") + " -o " + (tmp / "out"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("60000\n"), std::string::npos) << r.out;
  EXPECT_EQ(slurp(tmp.path / "out" / "two.changepoints.csv"), "t_ms\n60000\n");
  const auto cues = slurp(tmp.path / "out" / "two.cues.txt");
  EXPECT_NE(cues.find("01:00.000"), std::string::npos) << cues;
  EXPECT_TRUE(fs::exists(tmp.path / "out" / "two.filtered.csv"));
}

TEST(Cli, AnalyzeIsByteIdentical) {
  TempDir tmp;
  write(tmp / "two.csv", two_level_csv());
  ASSERT_EQ(cli("analyze " + (tmp / "two.csv") + " -o " + (tmp / "a")).code, 0);
  ASSERT_EQ(cli("analyze " + (tmp / "two.csv") + " -o " + (tmp / "b")).code, 0);
  for (const char* f : {"two.changepoints.csv", "two.filtered.csv", "two.cues.txt"}) {
    EXPECT_EQ(slurp(tmp.path / "a" / f), slurp(tmp.path / "b" / f)) << f;
  }
}

TEST(Cli, AnalyzeConstantHasNoChangepoints) {
  TempDir tmp;
  std::string body = "t_ms,value\n";
  for (int i = 0; i < 100; ++i) body += std::to_string(i * 1000) + ",50\n";
  write(tmp / "flat.csv", body);
  const auto r = cli("analyze " + (tmp / "flat.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(tmp.path / "flat.changepoints.csv"), "t_ms\n");
}

TEST(Cli, AnalyzeMalformedLine) {
  TempDir tmp;
  write(tmp / "bad.csv", "t_ms,value\n0,1\n1000,1\n2000,1\n3000,1\n4000,1\n5000,oops\n6000,1\n");
  const auto r = cli("analyze " + (tmp / "bad.csv"));
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("line 7"), std::string::npos) << r.out;
}

TEST(Cli, AnalyzeRejectsBadParameters) {
  TempDir tmp;
  write(tmp / "two.csv", two_level_csv());
  EXPECT_EQ(cli("analyze " + (tmp / "two.csv") + " --window 1").code, 2);
  EXPECT_EQ(cli("analyze " + (tmp / "missing.csv")).code, 4);
}

TEST(Cli, SimulateThenExport) {
  TempDir tmp;
  const auto data = tmp / "data";
  const auto r = cli("simulate -q --scenario " + std::string(HEARTSWAY_SOURCE_DIR) + "/scenarios/triad.conf" +
                     " --data-dir " + data + " --events " + (tmp / "events.jsonl") + " --io-log " + (tmp / "io.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("3 sessions; retained: S000003"), std::string::npos) << r.out;
  EXPECT_NE(slurp(tmp.path / "io.csv").find("swing"), std::string::npos);
  EXPECT_NE(slurp(tmp.path / "events.jsonl").find("\"kind\":\"SwingFired\""), std::string::npos);

  // raw data of the first two occupants is gone
  auto purged = cli("export S000001 --data-dir " + data + " -o " + (tmp / "x"));
  EXPECT_EQ(purged.code, 4) << purged.out;
  EXPECT_NE(purged.out.find("SessionPurged"), std::string::npos) << purged.out;
  auto unknown = cli("export S000099 --data-dir " + data + " -o " + (tmp / "x"));
  EXPECT_EQ(unknown.code, 4) << unknown.out;
  EXPECT_NE(unknown.out.find("SessionNotFound"), std::string::npos) << unknown.out;

  auto kept = cli("export predecessor --data-dir " + data + " -o " + (tmp / "x"));
  ASSERT_EQ(kept.code, 0) << kept.out;
  EXPECT_TRUE(fs::exists(tmp.path / "x" / "S000003.bpm.csv"));
  EXPECT_EQ(slurp(tmp.path / "x" / "S000003.stretch.csv").rfind("t_ms,stretch\n", 0), 0u);

  auto sched = cli("export --schedule --data-dir " + data + " -o " + (tmp / "s"));
  ASSERT_EQ(sched.code, 0) << sched.out;
  EXPECT_NE(slurp(tmp.path / "s" / "cues.txt").find("source session: S000003"), std::string::npos);
}

TEST(Cli, SecondOpenerIsLockedOut) {
  TempDir tmp;
  heartsway::store::TraceStore held(tmp.path / "data");
  const auto r = cli("export live --data-dir " + (tmp / "data"));
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("StoreLocked"), std::string::npos) << r.out;
}

TEST(Cli, ExportNeedsSelector) {
  TempDir tmp;
  EXPECT_EQ(cli("export --data-dir " + (tmp / "data")).code, 2);
}
