#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "shockkit/cohort.hpp"
#include "shockkit/event_store.hpp"
#include "shockkit/util.hpp"

namespace shockkit::did {

/// Group-mean weekly activity: per week, (sum of platform-wide records over
/// members) / group size. Group size is fixed across weeks; departed users
/// contribute zeros. Masked weeks carry no value.
struct WeeklySeries {
  std::int64_t anchor = 0;
  int week_lo = -52;
  int week_hi = 53;
  Eigen::VectorXd values;  // indexed week - week_lo
  std::set<int> mask;

  int week_count() const { return week_hi - week_lo + 1; }
  double at(int week) const { return values(week - week_lo); }
  bool masked(int week) const { return mask.count(week) != 0; }
};

WeeklySeries weekly_mean_series(const EventStore& store, const std::vector<std::string>& users,
                                std::int64_t anchor, std::set<int> mask = default_week_mask(),
                                int week_lo = -52, int week_hi = 53);

struct DidParts {
  double delta_pre = 0.0;
  double delta_post = 0.0;
  double did = 0.0;
};

/// Pre weeks are {week_lo..-1} minus mask, post weeks {0..week_hi} minus mask.
/// Throws if either period is fully masked.
DidParts did_statistic(const WeeklySeries& treatment, const WeeklySeries& control);

struct PermutationResult {
  DidParts observed;
  int n_sims = 0;
  std::uint64_t seed = 0;
  double p_one_tailed_lower = 1.0;
  std::vector<double> sim_dids;  // per-simulation DiD values, sim order
};

/// Per-user platform-wide weekly totals for a fixed user list; rows follow
/// the input order. The simulation pool representation.
Eigen::MatrixXd pool_week_matrix(const EventStore& store, const std::vector<std::string>& users,
                                 std::int64_t anchor, int week_lo = -52, int week_hi = 53);

/// Permutation test core: each simulation draws `group_size` distinct rows of
/// `pool` (seeded per simulation index, execution-order independent),
/// recomputes DiD against the fixed control series, and p =
/// (#{sim DiD < observed} + 1) / (n_sims + 1).
PermutationResult permutation_pvalue_from_pool(const Eigen::MatrixXd& pool, std::size_t group_size,
                                               const WeeklySeries& control, const DidParts& observed,
                                               int n_sims, std::uint64_t seed,
                                               const std::set<int>& mask, int week_lo, int week_hi,
                                               int threads = 1);

/// Spec-level wrapper: pool = the cohort's unmatched Control-A candidates.
PermutationResult permutation_pvalue(const EventStore& store, const cohort::Cohort& cohort,
                                     const DidParts& observed, const WeeklySeries& control,
                                     int n_sims, std::uint64_t seed, int threads = 1);

}  // namespace shockkit::did
