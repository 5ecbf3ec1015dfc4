#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "shockkit/util.hpp"

namespace shockkit {

/// Week index relative to an anchor: week i covers
/// [anchor + i*604800, anchor + (i+1)*604800). A record exactly at the anchor
/// lands in week 0.
inline int week_of(std::int64_t ts, std::int64_t anchor) {
  std::int64_t d = ts - anchor;
  std::int64_t w = d / kSecondsPerWeek;
  if (d < 0 && d % kSecondsPerWeek != 0) --w;
  return static_cast<int>(w);
}

inline std::int64_t week_start(std::int64_t anchor, int week) {
  return anchor + static_cast<std::int64_t>(week) * kSecondsPerWeek;
}

/// Per-user weekly count vectors over an anchored week range.
/// Rows are weeks (week_lo..week_hi inclusive), columns are the sorted,
/// duplicate-free dimension labels. Weeks in `missing_weeks` are excluded
/// from aggregation: their rows stay zero and consumers must skip them.
struct ActivityMatrix {
  std::string user;
  std::int64_t anchor = 0;
  int week_lo = -52;
  int week_hi = 53;
  std::vector<std::string> dimensions;
  Eigen::MatrixXi counts;  // (weeks x dims)
  std::set<int> missing_weeks;

  int week_count() const { return week_hi - week_lo + 1; }
  int row_of(int week) const { return week - week_lo; }
  bool in_range(int week) const { return week >= week_lo && week <= week_hi; }
  bool is_missing(int week) const { return missing_weeks.count(week) != 0; }

  long total() const { return counts.cast<long>().sum(); }
};

/// Default analysis mask: the edge weeks of the -52..+53 span are partial
/// against the +-365-day windows.
inline std::set<int> default_week_mask() { return {-52, 53}; }

}  // namespace shockkit
