#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shockkit/cohort.hpp"
#include "shockkit/event_store.hpp"
#include "shockkit/util.hpp"

namespace shockkit::attrition {

/// True iff the user has zero records anywhere on the platform in
/// (event_time + grace_weeks*7d, event_time + horizon]. Activity exactly at
/// the grace boundary counts as pre-grace residual activity.
bool is_inactive(const EventStore& store, std::string_view user, std::int64_t event_time,
                 int grace_weeks, std::int64_t horizon_s = 365 * kSecondsPerDay);

inline const std::vector<int> kDefaultBracketEdges = {10, 20, 40, 80};

/// Bracket index for a pre-window activity count against inclusive-low /
/// exclusive-high edges; the last bracket is open-ended. Counts below the
/// first edge return -1.
int activity_bracket(int count, const std::vector<int>& edges = kDefaultBracketEdges);

std::string bracket_label(int bracket, const std::vector<int>& edges = kDefaultBracketEdges);

struct PropTest {
  double z = 0.0;
  double p_two_sided = 1.0;
};

/// Pooled two-sample proportion z test, two-sided, no continuity correction.
/// Degenerate pooled proportions (0 or 1) give z = 0, p = 1.
PropTest two_proportion_test(std::int64_t k1, std::int64_t n1, std::int64_t k2, std::int64_t n2);

/// Standard normal CDF.
double normal_cdf(double x);

struct AttritionCell {
  std::string group;  // treatment | control_a | control_b
  int bracket = 0;
  int grace_weeks = 0;
  std::int64_t inactive = 0;
  std::int64_t size = 0;
  double rate = 0.0;
};

struct AttritionComparison {
  int bracket = 0;
  int grace_weeks = 0;
  std::string control;  // control_a | control_b
  double z = 0.0;
  double p_two_sided = 1.0;
  bool sig_one_tailed = false;  // treatment rate above control at one-tailed 0.05
};

struct AttritionTable {
  std::vector<int> edges;
  std::vector<int> graces;
  std::vector<AttritionCell> cells;
  std::vector<AttritionComparison> tests;
};

AttritionTable attrition_report(const EventStore& store, const cohort::Cohort& cohort,
                                const std::vector<int>& graces = {1, 2, 3, 4},
                                const std::vector<int>& edges = kDefaultBracketEdges);

void write_attrition_csv(const AttritionTable& table, const std::filesystem::path& path,
                         const Provenance& prov);

}  // namespace shockkit::attrition
