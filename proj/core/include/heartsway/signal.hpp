#pragma once

// Offline processing of one occupant's raw sensor series into the derived
// trace: inter-beat intervals and movement moments. Everything here is a pure
// function of its inputs.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "heartsway/types.hpp"

namespace heartsway::signal {

struct FilterParams {
  std::size_t window = 100;
  double k_sigma = 3.0;
  std::size_t min_window = 5;

  /// Throws Error(InvalidParams) unless window >= min_window >= 2 and k_sigma > 0.
  void validate() const;
};

struct PeltParams {
  double penalty = 10.0;
  /// Denominator of the RBF exponent, exp(-d^2 / bandwidth). Unset selects
  /// the median heuristic (see median_bandwidth).
  std::optional<double> kernel_bandwidth;

  void validate() const;
};

/// Plausible range for a validated heart-rate reading (exclusive bounds).
inline constexpr double kMinValidBpm = 20.0;
inline constexpr double kMaxValidBpm = 250.0;

/// One IbiEvent per sample, ibi_ms = 60000 / bpm, stamped with the sample time.
std::vector<IbiEvent> bpm_to_ibi(std::span<const BpmSample> samples);

struct FilterResult {
  std::vector<double> kept;
  std::vector<std::size_t> kept_indices;
  std::vector<std::size_t> removed_indices;
};

/// Removes point i when |x_i - mean| > k_sigma * std over the trailing window
/// [i - window, i) of the input. std is the population std. Points with fewer
/// than min_window trailing points are always kept.
FilterResult rolling_outlier_filter(std::span<const double> series,
                                    const FilterParams& params);

/// Median heuristic for the RBF bandwidth: median of pairwise squared
/// distances over an evenly strided subsample of at most
/// kBandwidthSubsample points. Returns 1 when that median is zero.
inline constexpr std::size_t kBandwidthSubsample = 256;
double median_bandwidth(std::span<const double> series);

/// Relative tolerance under which two segmentation costs count as tied.
inline constexpr double kCostTieTolerance = 1e-9;

/// True when a and b are equal under kCostTieTolerance.
bool costs_tied(double a, double b) noexcept;

/// Segment-start indices (exclusive of 0 and n) minimizing
///   sum of RBF segment costs + penalty * (#changepoints).
/// Ties go to fewer changepoints, then to the lexicographically earliest
/// index list. Throws Error(SeriesTooShort) when fewer than 2 points.
std::vector<std::size_t> pelt_changepoints(std::span<const double> series,
                                           const PeltParams& params);

/// Filter-then-detect over a stretch series. A changepoint between surviving
/// samples j-1 and j is reported at the first original sample after j-1, so
/// onsets swallowed by the outlier filter are not delayed.
std::vector<MovementMoment> movement_moments(std::span<const StretchSample> stretch,
                                             const FilterParams& filter,
                                             const PeltParams& pelt);

}  // namespace heartsway::signal
