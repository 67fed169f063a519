#include "heartsway/analysis.hpp"

#include <cstdio>
#include <cctype>
#include <sstream>

#include "heartsway/error.hpp"
#include "heartsway/kv.hpp"

namespace heartsway::analysis {

std::vector<StretchSample> parse_series_csv(const std::string& text) {
  std::vector<StretchSample> out;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = kv::trim(raw);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string where = "line " + std::to_string(line_no);
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      if (line_no == 1 && comma != std::string::npos) continue;
      throw Error(ErrorCode::ParseError, where + ": expected t_ms,value");
    }
    const std::string t_text = kv::trim(std::string_view(line).substr(0, comma));
    const std::string v_text = kv::trim(std::string_view(line).substr(comma + 1));
    if (line_no == 1 && !t_text.empty() && !std::isdigit(static_cast<unsigned char>(t_text.front())) &&
        t_text.front() != '-') {
      continue;  // header
    }
    StretchSample s{kv::to_int(t_text, where), kv::to_double(v_text, where)};
    if (!out.empty() && s.t <= out.back().t) {
      throw Error(ErrorCode::NonMonotonicTime, where + ": timestamps must increase");
    }
    out.push_back(s);
  }
  return out;
}

Analysis analyze_series(const std::vector<StretchSample>& series, const signal::FilterParams& filter,
                        const signal::PeltParams& pelt) {
  if (series.empty()) throw Error(ErrorCode::EmptySeries, "no samples");
  Analysis a;
  std::vector<double> values;
  values.reserve(series.size());
  for (const auto& s : series) values.push_back(s.value);
  const auto f = signal::rolling_outlier_filter(values, filter);
  for (auto i : f.kept_indices) a.filtered.push_back(series[i]);
  a.removed = f.removed_indices.size();
  a.changepoints = signal::movement_moments(series, filter, pelt);

  const TimeMs t0 = series.front().t;
  a.schedule.source_session = SessionId{"analysis"};
  a.schedule.loop_period_ms = series.back().t - t0 + 1;
  for (const auto& m : a.changepoints) a.schedule.swing_offsets_ms.push_back(m.t - t0);
  return a;
}

std::string changepoints_csv(const Analysis& a) {
  std::string out = "t_ms\n";
  for (const auto& m : a.changepoints) out += std::to_string(m.t) + '\n';
  return out;
}

std::string filtered_csv(const Analysis& a) {
  std::string out = "t_ms,value\n";
  char buf[64];
  for (const auto& s : a.filtered) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g\n", static_cast<long long>(s.t), s.value);
    out += buf;
  }
  return out;
}

}  // namespace heartsway::analysis
