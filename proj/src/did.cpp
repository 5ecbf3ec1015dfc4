#include "shockkit/did.hpp"

#include <algorithm>
#include <cmath>

namespace shockkit::did {

WeeklySeries weekly_mean_series(const EventStore& store, const std::vector<std::string>& users,
                                std::int64_t anchor, std::set<int> mask, int week_lo, int week_hi) {
  if (week_lo > week_hi) throw DataError("weekly_mean_series requires a nonempty week range");
  WeeklySeries s;
  s.anchor = anchor;
  s.week_lo = week_lo;
  s.week_hi = week_hi;
  s.mask = std::move(mask);
  s.values = Eigen::VectorXd::Zero(s.week_count());
  if (users.empty()) throw DataError("weekly_mean_series requires a nonempty user set");
  std::int64_t t0 = week_start(anchor, week_lo);
  std::int64_t t1 = week_start(anchor, week_hi + 1);
  for (const auto& user : users) {
    auto aid = store.author_id(user);
    if (!aid) continue;
    const auto& events = store.author_events(*aid);
    auto lo = std::lower_bound(events.begin(), events.end(), t0,
                               [](const EventStore::Event& e, std::int64_t t) { return e.ts < t; });
    for (auto it = lo; it != events.end() && it->ts < t1; ++it) {
      int w = week_of(it->ts, anchor);
      if (s.masked(w)) continue;
      s.values(w - week_lo) += 1.0;
    }
  }
  s.values /= static_cast<double>(users.size());
  return s;
}

namespace {

double period_mean(const WeeklySeries& s, int lo, int hi) {
  double sum = 0.0;
  int n = 0;
  for (int w = lo; w <= hi; ++w) {
    if (s.masked(w)) continue;
    sum += s.at(w);
    ++n;
  }
  if (n == 0) throw DataError("DiD period is fully masked");
  return sum / n;
}

}  // namespace

DidParts did_statistic(const WeeklySeries& treatment, const WeeklySeries& control) {
  if (treatment.anchor != control.anchor || treatment.week_lo != control.week_lo ||
      treatment.week_hi != control.week_hi || treatment.mask != control.mask)
    throw DataError("did_statistic requires series with a shared anchor and mask");
  DidParts d;
  double t_pre = period_mean(treatment, treatment.week_lo, -1);
  double c_pre = period_mean(control, control.week_lo, -1);
  double t_post = period_mean(treatment, 0, treatment.week_hi);
  double c_post = period_mean(control, 0, control.week_hi);
  d.delta_pre = t_pre - c_pre;
  d.delta_post = t_post - c_post;
  d.did = d.delta_post - d.delta_pre;
  return d;
}

Eigen::MatrixXd pool_week_matrix(const EventStore& store, const std::vector<std::string>& users,
                                 std::int64_t anchor, int week_lo, int week_hi) {
  const int weeks = week_hi - week_lo + 1;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(users.size()), weeks);
  std::int64_t t0 = week_start(anchor, week_lo);
  std::int64_t t1 = week_start(anchor, week_hi + 1);
  for (std::size_t u = 0; u < users.size(); ++u) {
    auto aid = store.author_id(users[u]);
    if (!aid) continue;
    const auto& events = store.author_events(*aid);
    auto lo = std::lower_bound(events.begin(), events.end(), t0,
                               [](const EventStore::Event& e, std::int64_t t) { return e.ts < t; });
    for (auto it = lo; it != events.end() && it->ts < t1; ++it)
      m(static_cast<Eigen::Index>(u), week_of(it->ts, anchor) - week_lo) += 1.0;
  }
  return m;
}

PermutationResult permutation_pvalue_from_pool(const Eigen::MatrixXd& pool, std::size_t group_size,
                                               const WeeklySeries& control, const DidParts& observed,
                                               int n_sims, std::uint64_t seed,
                                               const std::set<int>& mask, int week_lo, int week_hi,
                                               int threads) {
  if (n_sims < 1) throw DataError("permutation test requires n_sims >= 1");
  if (static_cast<std::size_t>(pool.rows()) < group_size)
    throw DataError("permutation pool smaller than the treatment group (" +
                    std::to_string(pool.rows()) + " < " + std::to_string(group_size) + ")");
  if (group_size == 0) throw DataError("permutation test requires a nonempty group");

  PermutationResult result;
  result.observed = observed;
  result.n_sims = n_sims;
  result.seed = seed;
  result.sim_dids.assign(static_cast<std::size_t>(n_sims), 0.0);

  parallel_for(static_cast<std::size_t>(n_sims), threads, [&](std::size_t lo_i, std::size_t hi_i) {
    for (std::size_t i = lo_i; i < hi_i; ++i) {
      Rng rng(derive_seed(seed, 7, i));
      auto rows = rng.sample_without_replacement(static_cast<std::size_t>(pool.rows()), group_size);
      WeeklySeries sim;
      sim.anchor = control.anchor;
      sim.week_lo = week_lo;
      sim.week_hi = week_hi;
      sim.mask = mask;
      sim.values = Eigen::VectorXd::Zero(week_hi - week_lo + 1);
      for (std::size_t r : rows) sim.values += pool.row(static_cast<Eigen::Index>(r)).transpose();
      sim.values /= static_cast<double>(group_size);
      for (int w : mask)
        if (w >= week_lo && w <= week_hi) sim.values(w - week_lo) = 0.0;
      result.sim_dids[i] = did_statistic(sim, control).did;
    }
  });

  int below = 0;
  for (double d : result.sim_dids)
    if (d < observed.did) ++below;
  result.p_one_tailed_lower = (static_cast<double>(below) + 1.0) / (static_cast<double>(n_sims) + 1.0);
  return result;
}

PermutationResult permutation_pvalue(const EventStore& store, const cohort::Cohort& cohort,
                                     const DidParts& observed, const WeeklySeries& control,
                                     int n_sims, std::uint64_t seed, int threads) {
  Eigen::MatrixXd pool = pool_week_matrix(store, cohort.unmatched_pool_a, cohort.spec.event_time,
                                          control.week_lo, control.week_hi);
  return permutation_pvalue_from_pool(pool, cohort.treatment_users.size(), control, observed, n_sims,
                                      seed, control.mask, control.week_lo, control.week_hi, threads);
}

}  // namespace shockkit::did
