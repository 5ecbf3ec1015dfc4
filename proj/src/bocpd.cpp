#include "shockkit/bocpd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shockkit::bocpd {

namespace {

double lgamma_safe(double x) {
#if defined(__GLIBC__) || defined(__linux__)
  int sign = 0;
  return ::lgamma_r(x, &sign);
#else
  return std::lgamma(x);
#endif
}

/// log NB predictive of one count under a Gamma(alpha, beta) rate posterior.
double log_nb(int y, double alpha, double beta) {
  return lgamma_safe(y + alpha) - lgamma_safe(alpha) - lgamma_safe(y + 1.0) +
         alpha * std::log(beta / (beta + 1.0)) - y * std::log(beta + 1.0);
}

double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

void BocpdParams::validate() const {
  if (!(hazard > 0.0 && hazard < 1.0)) throw DataError("bocpd: hazard must be in (0,1)");
  if (!(alpha0 > 0.0 && beta0 > 0.0)) throw DataError("bocpd: prior parameters must be > 0");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw DataError("bocpd: threshold must be in (0,1]");
}

RunLengthFilter::RunLengthFilter(int dims, const BocpdParams& params)
    : dims_(dims), params_(params) {
  params_.validate();
  if (dims < 1) throw DataError("bocpd: dimensionality must be >= 1");
  components_.push_back(Component{0.0, 0, 0, Eigen::VectorXd::Zero(dims)});
}

double RunLengthFilter::step(const Eigen::VectorXi& y) {
  if (y.size() != dims_) throw DataError("bocpd: observation dimensionality mismatch");
  for (int d = 0; d < dims_; ++d)
    if (y(d) < 0) throw DataError("bocpd: counts must be nonnegative");

  const double log_h = std::log(params_.hazard);
  const double log_1h = std::log1p(-params_.hazard);

  // Prior predictive: a fresh segment opening with y.
  double log_pi0 = 0.0;
  for (int d = 0; d < dims_; ++d) log_pi0 += log_nb(y(d), params_.alpha0, params_.beta0);

  std::vector<double> new_logw;
  new_logw.reserve(components_.size() + 1);
  std::vector<double> prev_logw;
  prev_logw.reserve(components_.size());
  for (const auto& c : components_) prev_logw.push_back(c.logw);
  // Reset mass pools every predecessor.
  new_logw.push_back(log_h + log_pi0 + logsumexp(prev_logw));

  std::vector<Component> grown;
  grown.reserve(components_.size() + 1);
  for (auto& c : components_) {
    double log_pi = 0.0;
    for (int d = 0; d < dims_; ++d)
      log_pi += log_nb(y(d), params_.alpha0 + c.sums(d), params_.beta0 + c.n);
    new_logw.push_back(log_1h + c.logw + log_pi);
    c.logw = new_logw.back();
    c.run_length += 1;
    c.n += 1;
    c.sums += y.cast<double>();
    grown.push_back(std::move(c));
  }

  double log_z = logsumexp(new_logw);
  log_evidence_ += log_z;

  std::vector<Component> next;
  next.reserve(grown.size() + 1);
  next.push_back(Component{new_logw[0] - log_z, 0, 1, y.cast<double>()});
  for (auto& c : grown) {
    c.logw -= log_z;
    next.push_back(std::move(c));
  }

  double p0 = std::exp(next.front().logw);

  // Truncate negligible run lengths and renormalize.
  const double log_eps = std::log(params_.truncation);
  std::vector<Component> kept;
  kept.reserve(next.size());
  for (auto& c : next)
    if (c.logw >= log_eps) kept.push_back(std::move(c));
  if (kept.empty()) kept.push_back(std::move(next.front()));
  std::vector<double> kept_logw;
  kept_logw.reserve(kept.size());
  for (const auto& c : kept) kept_logw.push_back(c.logw);
  double log_kept = logsumexp(kept_logw);
  for (auto& c : kept) c.logw -= log_kept;
  components_ = std::move(kept);
  ++time_;

  double total = 0.0;
  for (const auto& c : components_) total += std::exp(c.logw);
  max_drift_ = std::max(max_drift_, std::abs(total - 1.0));

  return p0;
}

Eigen::VectorXd RunLengthFilter::run_length_distribution() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(time_ + 1);
  for (const auto& c : components_) out(c.run_length) = std::exp(c.logw);
  return out;
}

Eigen::VectorXd RunLengthFilter::log_joint() const {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(time_ + 1, -std::numeric_limits<double>::infinity());
  for (const auto& c : components_) out(c.run_length) = c.logw + log_evidence_;
  return out;
}

bool ChangepointTrace::flagged_in(int week_lo, int week_hi) const {
  for (int w : flagged_weeks)
    if (w >= week_lo && w <= week_hi) return true;
  return false;
}

ChangepointTrace detect_changepoints(const ActivityMatrix& matrix, const BocpdParams& params) {
  ChangepointTrace trace;
  if (matrix.counts.rows() == 0 || matrix.counts.cols() == 0) {
    trace.probabilities = Eigen::VectorXd(0);
    return trace;
  }
  RunLengthFilter filter(static_cast<int>(matrix.counts.cols()), params);
  std::vector<double> probs;
  for (int w = matrix.week_lo; w <= matrix.week_hi; ++w) {
    if (matrix.is_missing(w)) continue;
    double p = filter.step(matrix.counts.row(matrix.row_of(w)).transpose());
    trace.weeks.push_back(w);
    probs.push_back(p);
    if (p >= params.threshold) trace.flagged_weeks.push_back(w);
  }
  trace.probabilities = Eigen::Map<Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
  trace.max_normalization_drift = filter.max_normalization_drift();
  return trace;
}

ActivityMatrix build_user_matrix(const EventStore& store, std::string_view user, std::int64_t anchor,
                                 int week_lo, int week_hi, std::set<int> missing_weeks,
                                 int max_dims) {
  ActivityMatrix m;
  m.user = std::string(user);
  m.anchor = anchor;
  m.week_lo = week_lo;
  m.week_hi = week_hi;
  m.missing_weeks = std::move(missing_weeks);

  auto aid = store.author_id(user);
  std::int64_t t0 = week_start(anchor, week_lo);
  std::int64_t t1 = week_start(anchor, week_hi + 1);
  std::map<std::uint32_t, long> sub_counts;
  if (aid) {
    const auto& events = store.author_events(*aid);
    auto lo = std::lower_bound(events.begin(), events.end(), t0,
                               [](const EventStore::Event& e, std::int64_t t) { return e.ts < t; });
    for (auto it = lo; it != events.end() && it->ts < t1; ++it) ++sub_counts[it->subreddit];
  }

  std::vector<std::pair<std::string, long>> ranked;
  ranked.reserve(sub_counts.size());
  for (const auto& [sid, n] : sub_counts) ranked.emplace_back(store.subreddit_name(sid), n);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  bool pooled = static_cast<int>(ranked.size()) > max_dims;
  std::vector<std::string> dims;
  for (int i = 0; i < std::min<int>(max_dims, static_cast<int>(ranked.size())); ++i)
    dims.push_back(ranked[static_cast<std::size_t>(i)].first);
  if (pooled) dims.push_back("__other__");
  if (dims.empty()) dims.push_back(std::string(kAllDimensions));
  std::sort(dims.begin(), dims.end());
  m.dimensions = dims;
  m.counts = Eigen::MatrixXi::Zero(m.week_count(), static_cast<int>(dims.size()));

  if (!aid) return m;
  std::map<std::uint32_t, int> column;
  int other_col = -1;
  for (std::size_t c = 0; c < m.dimensions.size(); ++c) {
    if (m.dimensions[c] == "__other__") {
      other_col = static_cast<int>(c);
      continue;
    }
    auto sid = store.subreddit_id(m.dimensions[c]);
    if (sid) column[*sid] = static_cast<int>(c);
  }
  const auto& events = store.author_events(*aid);
  auto lo = std::lower_bound(events.begin(), events.end(), t0,
                             [](const EventStore::Event& e, std::int64_t t) { return e.ts < t; });
  for (auto it = lo; it != events.end() && it->ts < t1; ++it) {
    int w = week_of(it->ts, anchor);
    if (m.is_missing(w)) continue;
    auto cit = column.find(it->subreddit);
    int col = cit != column.end() ? cit->second : other_col;
    if (col < 0) continue;
    m.counts(m.row_of(w), col) += 1;
  }
  return m;
}

namespace {

/// Flagged weeks for every user in a list.
std::vector<std::vector<int>> per_user_flags(const EventStore& store,
                                             const std::vector<std::string>& users, std::int64_t anchor,
                                             const BocpdParams& params, int threads) {
  std::vector<std::vector<int>> flags(users.size());
  parallel_for(users.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t u = lo; u < hi; ++u) {
      ActivityMatrix m = build_user_matrix(store, users[u], anchor);
      flags[u] = detect_changepoints(m, params).flagged_weeks;
    }
  });
  return flags;
}

}  // namespace

CohortRates cohort_changepoint_rates(const EventStore& store, const cohort::Cohort& cohort,
                                     const BocpdParams& params, int threads) {
  struct Group {
    std::string name;
    std::vector<std::string> users;
  };
  std::vector<Group> groups = {{"treatment", cohort.treatment_users},
                               {"control_a", cohort.matched_controls_a()},
                               {"control_b", cohort.matched_controls_b()}};
  CohortRates out;
  std::set<int> mask = default_week_mask();
  std::vector<int> weeks;
  for (int w = -52; w <= 53; ++w)
    if (!mask.count(w)) weeks.push_back(w);

  for (const auto& g : groups) {
    if (g.users.empty()) throw DataError("changepoint rates: group '" + g.name + "' has no users");
    auto flags = per_user_flags(store, g.users, cohort.spec.event_time, params, threads);
    GroupRates rates;
    rates.group = g.name;
    rates.n_users = static_cast<int>(g.users.size());
    rates.weeks = weeks;
    rates.fraction_flagged = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(weeks.size()));
    std::map<int, int> col;
    for (std::size_t i = 0; i < weeks.size(); ++i) col[weeks[i]] = static_cast<int>(i);
    for (const auto& user_flags : flags)
      for (int w : user_flags) {
        auto it = col.find(w);
        if (it != col.end()) rates.fraction_flagged(it->second) += 1.0;
      }
    rates.fraction_flagged /= static_cast<double>(g.users.size());
    out.groups.push_back(std::move(rates));
  }

  for (std::size_t g = 1; g < out.groups.size(); ++g) {
    const auto& f = out.groups[g].fraction_flagged;
    double mean = f.mean();
    double var = (f.array() - mean).square().sum() / std::max<double>(1.0, f.size() - 1);
    out.band[out.groups[g].group] = mean + 3.0 * std::sqrt(var);
  }
  return out;
}

WindowRateTable changepoint_window_rate(const EventStore& store, const cohort::Cohort& cohort,
                                        const BocpdParams& params, int window_weeks,
                                        const std::vector<int>& edges, int threads) {
  struct Group {
    std::string name;
    const std::vector<std::string> users;
    const std::map<std::string, int>* counts;
  };
  auto controls_a = cohort.matched_controls_a();
  auto controls_b = cohort.matched_controls_b();
  std::vector<Group> groups = {{"treatment", cohort.treatment_users, &cohort.treatment_pre_counts},
                               {"control_a", controls_a, &cohort.control_a_counts},
                               {"control_b", controls_b, &cohort.control_b_counts}};

  WindowRateTable table;
  table.edges = edges;
  table.window_weeks = window_weeks;
  const int nb = static_cast<int>(edges.size());
  std::vector<std::vector<std::int64_t>> flagged(groups.size(),
                                                 std::vector<std::int64_t>(static_cast<std::size_t>(nb), 0));
  std::vector<std::vector<std::int64_t>> size(groups.size(),
                                              std::vector<std::int64_t>(static_cast<std::size_t>(nb), 0));

  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].users.empty())
      throw DataError("changepoint window rate: group '" + groups[g].name + "' has no users");
    auto flags = per_user_flags(store, groups[g].users, cohort.spec.event_time, params, threads);
    for (std::size_t u = 0; u < groups[g].users.size(); ++u) {
      auto it = groups[g].counts->find(groups[g].users[u]);
      int count = it == groups[g].counts->end() ? 0 : it->second;
      int b = attrition::activity_bracket(count, edges);
      if (b < 0) continue;
      ++size[g][static_cast<std::size_t>(b)];
      bool hit = false;
      for (int w : flags[u])
        if (w >= -window_weeks && w <= window_weeks) hit = true;
      if (hit) ++flagged[g][static_cast<std::size_t>(b)];
    }
  }

  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int b = 0; b < nb; ++b) {
      WindowRateCell cell;
      cell.group = groups[g].name;
      cell.bracket = b;
      cell.flagged = flagged[g][static_cast<std::size_t>(b)];
      cell.size = size[g][static_cast<std::size_t>(b)];
      cell.rate = cell.size > 0 ? static_cast<double>(cell.flagged) / static_cast<double>(cell.size) : 0.0;
      table.cells.push_back(cell);
    }
  }
  for (std::size_t ctrl = 1; ctrl < groups.size(); ++ctrl) {
    for (int b = 0; b < nb; ++b) {
      std::int64_t nt = size[0][static_cast<std::size_t>(b)];
      std::int64_t nc = size[ctrl][static_cast<std::size_t>(b)];
      if (nt < 1 || nc < 1) continue;
      auto t = attrition::two_proportion_test(flagged[0][static_cast<std::size_t>(b)], nt,
                                              flagged[ctrl][static_cast<std::size_t>(b)], nc);
      WindowRateComparison cmp;
      cmp.bracket = b;
      cmp.control = groups[ctrl].name;
      cmp.z = t.z;
      cmp.p_two_sided = t.p_two_sided;
      double rt = static_cast<double>(flagged[0][static_cast<std::size_t>(b)]) / static_cast<double>(nt);
      double rc = static_cast<double>(flagged[ctrl][static_cast<std::size_t>(b)]) / static_cast<double>(nc);
      cmp.sig_one_tailed = rt > rc && t.p_two_sided / 2.0 < 0.05;
      table.tests.push_back(cmp);
    }
  }
  return table;
}

}  // namespace shockkit::bocpd
