#include <benchmark/benchmark.h>

#include <random>

#include "heartsway/replay.hpp"
#include "heartsway/signal.hpp"
#include "heartsway/wire.hpp"

using namespace heartsway;

namespace {

// Stretch-like series: a few levels with gaussian noise and sparse spikes.
std::vector<double> stretch_series(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 3.0);
  std::vector<double> x(n);
  double level = 300.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 240 == 0) level += static_cast<double>(rng() % 120) - 60.0;
    x[i] = level + noise(rng);
    if (rng() % 50 == 0) x[i] += 80.0;
  }
  return x;
}

void BM_Pelt(benchmark::State& state) {
  const auto x = stretch_series(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(signal::pelt_changepoints(x, {}));
  state.SetComplexityN(state.range(0));
}
// 600 and 3600 are a 10 min and a 60 min session at 1 Hz
BENCHMARK(BM_Pelt)->Arg(120)->Arg(600)->Arg(1800)->Arg(3600)->Unit(benchmark::kMillisecond)->Complexity();

void BM_OutlierFilter(benchmark::State& state) {
  const auto x = stretch_series(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(signal::rolling_outlier_filter(x, {}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_OutlierFilter)->Arg(600)->Arg(3600);

void BM_MedianBandwidth(benchmark::State& state) {
  const auto x = stretch_series(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(signal::median_bandwidth(x));
}
BENCHMARK(BM_MedianBandwidth)->Arg(3600);

void BM_EncodePage(benchmark::State& state) {
  wire::SchedulePage p{wire::PageKind::Beat, 0, 1, {}};
  for (std::uint32_t i = 0; i < 30; ++i) p.offsets.push_back(1000 * i + 17);
  std::uint8_t seq = 0;
  for (auto _ : state) benchmark::DoNotOptimize(wire::encode(p, seq++));
}
BENCHMARK(BM_EncodePage);

void BM_StreamDecode(benchmark::State& state) {
  std::vector<std::uint8_t> stream;
  for (std::uint32_t i = 0; i < 1000; ++i) {
    const auto f = wire::encode(wire::BpmReport{i * 1000, static_cast<std::uint16_t>(600 + i % 200)},
                                static_cast<std::uint8_t>(i));
    stream.insert(stream.end(), f.begin(), f.end());
  }
  for (auto _ : state) {
    wire::StreamDecoder d;
    benchmark::DoNotOptimize(d.feed(stream));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * stream.size()));
}
BENCHMARK(BM_StreamDecode);

void BM_NextEvent(benchmark::State& state) {
  replay::ReplaySchedule s;
  s.loop_period_ms = 3'600'000;
  for (TimeMs t = 850; t < s.loop_period_ms; t += 850) s.beat_offsets_ms.push_back(t);
  for (TimeMs t = 90'000; t < s.loop_period_ms; t += 180'000) s.swing_offsets_ms.push_back(t);
  TimeMs e = 0;
  for (auto _ : state) {
    auto up = replay::next_event(s, e);
    e = up->event.elapsed_ms;
    benchmark::DoNotOptimize(up);
  }
}
BENCHMARK(BM_NextEvent);

}  // namespace

BENCHMARK_MAIN();
