#include "heartsway/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "heartsway/error.hpp"

namespace heartsway::signal {

void FilterParams::validate() const {
  if (min_window < 2) {
    throw Error(ErrorCode::InvalidParams, "filter.min_window must be >= 2");
  }
  if (window < min_window) {
    throw Error(ErrorCode::InvalidParams, "filter.window must be >= filter.min_window");
  }
  if (!(k_sigma > 0.0) || !std::isfinite(k_sigma)) {
    throw Error(ErrorCode::InvalidParams, "filter.k_sigma must be > 0");
  }
}

void PeltParams::validate() const {
  if (!(penalty >= 0.0) || !std::isfinite(penalty)) {
    throw Error(ErrorCode::InvalidParams, "pelt.penalty must be >= 0");
  }
  if (kernel_bandwidth && (!(*kernel_bandwidth > 0.0) || !std::isfinite(*kernel_bandwidth))) {
    throw Error(ErrorCode::InvalidParams, "pelt.kernel_bandwidth must be > 0");
  }
}

std::vector<IbiEvent> bpm_to_ibi(std::span<const BpmSample> samples) {
  if (samples.empty()) {
    throw Error(ErrorCode::EmptySeries, "no BPM samples");
  }
  std::vector<IbiEvent> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!(s.bpm > 0.0) || !std::isfinite(s.bpm)) {
      throw Error(ErrorCode::NonPositiveBpm,
                  "sample " + std::to_string(i) + " has bpm " + std::to_string(s.bpm));
    }
    if (i > 0 && s.t <= samples[i - 1].t) {
      throw Error(ErrorCode::NonMonotonicTime,
                  "sample " + std::to_string(i) + " does not advance in time");
    }
    out.push_back({s.t, 60000.0 / s.bpm});
  }
  return out;
}

FilterResult rolling_outlier_filter(std::span<const double> series,
                                    const FilterParams& params) {
  params.validate();
  FilterResult result;
  result.kept.reserve(series.size());
  result.kept_indices.reserve(series.size());

  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t first = i > params.window ? i - params.window : 0;
    const auto window = series.subspan(first, i - first);
    bool outlier = false;
    if (window.size() >= params.min_window) {
      double sum = 0.0;
      for (double v : window) sum += v;
      const double mean = sum / static_cast<double>(window.size());
      double ss = 0.0;
      for (double v : window) ss += (v - mean) * (v - mean);
      const double sd = std::sqrt(ss / static_cast<double>(window.size()));
      outlier = std::abs(series[i] - mean) > params.k_sigma * sd;
    }
    if (outlier) {
      result.removed_indices.push_back(i);
    } else {
      result.kept.push_back(series[i]);
      result.kept_indices.push_back(i);
    }
  }
  return result;
}

double median_bandwidth(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 2) return 1.0;

  std::vector<double> sample;
  if (n <= kBandwidthSubsample) {
    sample.assign(series.begin(), series.end());
  } else {
    sample.reserve(kBandwidthSubsample);
    for (std::size_t k = 0; k < kBandwidthSubsample; ++k) {
      sample.push_back(series[k * (n - 1) / (kBandwidthSubsample - 1)]);
    }
  }

  std::vector<double> d2;
  d2.reserve(sample.size() * (sample.size() - 1) / 2);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    for (std::size_t j = i + 1; j < sample.size(); ++j) {
      const double d = sample[i] - sample[j];
      d2.push_back(d * d);
    }
  }

  const std::size_t m = d2.size();
  const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(m / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  double median = *mid;
  if (m % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), mid);
    median = (lower + median) / 2.0;
  }
  return median > 0.0 ? median : 1.0;
}

bool costs_tied(double a, double b) noexcept {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) <= kCostTieTolerance * scale;
}

namespace {

// Candidate changepoints stay alive unless provably worse by this margin.
// Keeps pruning exact in the presence of rounding in the cost updates.
constexpr double kPruneMargin = 1e-7;

struct Candidate {
  std::size_t start;
  // Sum of kernel values over all pairs (i, j) in [start, t).
  double gram_sum;
};

// Changepoint list of the optimal segmentation of [0, t), rebuilt from the
// back-pointer table.
std::vector<std::size_t> trace_back(const std::vector<std::size_t>& parent, std::size_t t) {
  std::vector<std::size_t> cps;
  while (t > 0) {
    t = parent[t];
    if (t > 0) cps.push_back(t);
  }
  std::reverse(cps.begin(), cps.end());
  return cps;
}

}  // namespace

std::vector<std::size_t> pelt_changepoints(std::span<const double> series,
                                           const PeltParams& params) {
  params.validate();
  const std::size_t n = series.size();
  if (n < 2) {
    throw Error(ErrorCode::SeriesTooShort,
                "changepoint detection needs at least 2 points, got " + std::to_string(n));
  }
  for (double v : series) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidParams, "series has a non-finite value");
  }

  const double bandwidth =
      params.kernel_bandwidth ? *params.kernel_bandwidth : median_bandwidth(series);
  const double penalty = params.penalty;
  auto kernel = [&](std::size_t i, std::size_t j) {
    const double d = series[i] - series[j];
    return std::exp(-(d * d) / bandwidth);
  };

  // best[t]: optimal penalized cost of [0, t), counting a penalty per segment
  // boundary; best[0] = 0 and the first segment is not penalized.
  std::vector<double> best(n + 1, 0.0);
  std::vector<std::size_t> parent(n + 1, 0);
  std::vector<std::size_t> count(n + 1, 0);

  std::vector<Candidate> alive{{0, 0.0}};
  std::vector<double> column;  // column[i - lo] = K(i, t-1) for i in [lo, t-1)
  std::vector<double> value;

  for (std::size_t t = 1; t <= n; ++t) {
    const std::size_t newest = t - 1;
    const std::size_t lo = alive.front().start;

    // Suffix sums of the new column so each candidate's gram sum can absorb
    // the point at t-1 in O(1).
    column.assign(newest - lo + 1, 0.0);
    for (std::size_t i = newest; i-- > lo;) {
      column[i - lo] = column[i - lo + 1] + kernel(i, newest);
    }
    for (auto& c : alive) {
      c.gram_sum += 2.0 * column[c.start - lo] + 1.0;
    }

    value.resize(alive.size());
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < alive.size(); ++k) {
      const auto& c = alive[k];
      const double len = static_cast<double>(t - c.start);
      const double seg = len - c.gram_sum / len;
      value[k] = best[c.start] + seg + (c.start > 0 ? penalty : 0.0);
      lowest = std::min(lowest, value[k]);
    }

    // Among candidates tied with the minimum: fewer changepoints first, then
    // the lexicographically earliest changepoint list.
    std::size_t chosen = alive.size();
    std::vector<std::size_t> chosen_cps;
    for (std::size_t k = 0; k < alive.size(); ++k) {
      if (!costs_tied(value[k], lowest)) continue;
      const std::size_t s = alive[k].start;
      const std::size_t cps = count[s] + (s > 0 ? 1 : 0);
      if (chosen == alive.size()) {
        chosen = k;
        continue;
      }
      const std::size_t cur = alive[chosen].start;
      const std::size_t cur_cps = count[cur] + (cur > 0 ? 1 : 0);
      if (cps != cur_cps) {
        if (cps < cur_cps) {
          chosen = k;
          chosen_cps.clear();
        }
        continue;
      }
      if (chosen_cps.empty()) {
        chosen_cps = trace_back(parent, cur);
        if (cur > 0) chosen_cps.push_back(cur);
      }
      auto other = trace_back(parent, s);
      if (s > 0) other.push_back(s);
      if (other < chosen_cps) {
        chosen = k;
        chosen_cps = std::move(other);
      }
    }

    const std::size_t from = alive[chosen].start;
    best[t] = value[chosen];
    parent[t] = from;
    count[t] = count[from] + (from > 0 ? 1 : 0);

    // Prune: a start whose cost already exceeds best[t] can never win later,
    // because the RBF cost never increases when a segment is split.
    const double bound = best[t] + penalty + kPruneMargin * std::max(1.0, std::abs(best[t]));
    std::size_t keep = 0;
    for (std::size_t k = 0; k < alive.size(); ++k) {
      if (value[k] <= bound) alive[keep++] = alive[k];
    }
    alive.resize(keep);
    alive.push_back({t, 0.0});
  }

  return trace_back(parent, n);
}

std::vector<MovementMoment> movement_moments(std::span<const StretchSample> stretch,
                                             const FilterParams& filter,
                                             const PeltParams& pelt) {
  for (std::size_t i = 1; i < stretch.size(); ++i) {
    if (stretch[i].t <= stretch[i - 1].t) {
      throw Error(ErrorCode::NonMonotonicTime,
                  "stretch sample " + std::to_string(i) + " does not advance in time");
    }
  }
  std::vector<double> values;
  values.reserve(stretch.size());
  for (const auto& s : stretch) values.push_back(s.value);

  const auto filtered = rolling_outlier_filter(values, filter);
  if (filtered.kept.size() < 2) {
    throw Error(ErrorCode::SeriesTooShort,
                std::to_string(filtered.kept.size()) + " stretch samples survive filtering");
  }

  std::vector<MovementMoment> moments;
  for (std::size_t cp : pelt_changepoints(filtered.kept, pelt)) {
    const std::size_t original = filtered.kept_indices[cp - 1] + 1;
    moments.push_back({stretch[original].t});
  }
  return moments;
}

}  // namespace heartsway::signal
