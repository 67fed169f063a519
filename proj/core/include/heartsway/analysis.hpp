#pragma once

// Offline runs of the stretch pipeline over a `t_ms,value` CSV.

#include <string>
#include <vector>

#include "heartsway/replay.hpp"
#include "heartsway/signal.hpp"

namespace heartsway::analysis {

/// `t_ms,value` rows; an optional non-numeric header on line 1; blank lines
/// are skipped. Throws Error(ParseError) naming the offending line, and
/// Error(NonMonotonicTime) when timestamps go backwards.
std::vector<StretchSample> parse_series_csv(const std::string& text);

struct Analysis {
  std::vector<StretchSample> filtered;
  std::size_t removed = 0;
  std::vector<MovementMoment> changepoints;
  /// Swing-only schedule relative to the first sample, for the cue sheet.
  replay::ReplaySchedule schedule;
};

Analysis analyze_series(const std::vector<StretchSample>& series, const signal::FilterParams& filter,
                        const signal::PeltParams& pelt);

std::string changepoints_csv(const Analysis& a);  // `t_ms` per line, with header
std::string filtered_csv(const Analysis& a);      // `t_ms,value`

}  // namespace heartsway::analysis
