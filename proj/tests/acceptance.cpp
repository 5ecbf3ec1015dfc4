// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Spawns the CLI binary for the ingestion and end-to-end criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "shockkit/attrition.hpp"
#include "shockkit/bocpd.hpp"
#include "shockkit/cohort.hpp"
#include "shockkit/did.hpp"
#include "shockkit/event_store.hpp"
#include "shockkit/predictor.hpp"
#include "shockkit/synthlab.hpp"
#include "test_support.hpp"

using namespace shockkit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

class Criterion {
 public:
  explicit Criterion(std::string name) : name_(std::move(name)), start_(Clock::now()) {}

  void require(bool ok, const std::string& detail) {
    if (!ok) problems_.push_back(detail);
  }

  double seconds() const {
    return std::chrono::duration<double>(Clock::now() - start_).count();
  }

  ~Criterion() {
    double s = seconds();
    if (problems_.empty()) {
      std::printf("[PASS] %-28s (%.1fs)\n", name_.c_str(), s);
    } else {
      ++g_failures;
      std::printf("[FAIL] %-28s (%.1fs)\n", name_.c_str(), s);
      for (const auto& p : problems_) std::printf("       - %s\n", p.c_str());
    }
    std::fflush(stdout);
  }

 private:
  std::string name_;
  Clock::time_point start_;
  std::vector<std::string> problems_;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1 + 3. BOCPD oracle equivalence and normalization drift over the battery.
// ---------------------------------------------------------------------------

void criterion_bocpd_oracle() {
  const std::vector<double> hazards = {0.01, 0.1, 0.5};
  const std::vector<std::pair<double, double>> priors = {{1.0, 1.0}, {1.0, 0.1}, {2.0, 0.5}};
  Rng rng(6001);
  double worst_rel = 0.0, worst_drift = 0.0;
  int series_count = 0;
  {
    Criterion c("bocpd-oracle-equivalence");
    for (int trial = 0; trial < 60; ++trial) {
      int T = 1 + static_cast<int>(rng.below(8));
      int dims = 1 + static_cast<int>(rng.below(2));
      double h = hazards[trial % hazards.size()];
      auto [a0, b0] = priors[trial % priors.size()];
      Eigen::MatrixXi counts(T, dims);
      for (int t = 0; t < T; ++t)
        for (int d = 0; d < dims; ++d) counts(t, d) = static_cast<int>(rng.below(11));
      Eigen::VectorXd want = synthlab::oracle_changepoint_exact(counts, a0, b0, h);
      bocpd::BocpdParams params;
      params.alpha0 = a0;
      params.beta0 = b0;
      params.hazard = h;
      bocpd::RunLengthFilter filter(dims, params);
      for (int t = 0; t < T; ++t) {
        double got = filter.step(counts.row(t).transpose());
        worst_rel = std::max(worst_rel, std::abs(got - want(t)) / std::max(want(t), 1e-300));
      }
      worst_drift = std::max(worst_drift, filter.max_normalization_drift());
      ++series_count;
    }
    c.require(series_count >= 50, "battery must hold at least 50 series");
    c.require(worst_rel <= 1e-9, "worst relative error " + fmt(worst_rel) + " > 1e-9");
    c.require(c.seconds() < 10.0, "battery took " + fmt(c.seconds()) + "s >= 10s");
  }
  Criterion drift("bocpd-normalization-drift");
  drift.require(worst_drift <= 1e-9, "worst drift " + fmt(worst_drift) + " > 1e-9");
}

// ---------------------------------------------------------------------------
// 2. BOCPD detection power on a planted 4x jump.
// ---------------------------------------------------------------------------

void criterion_bocpd_power() {
  Criterion c("bocpd-detection-power");
  bocpd::BocpdParams params;
  params.alpha0 = 1.0;
  params.beta0 = 0.1;
  params.hazard = 0.01;
  params.threshold = 0.90;  // paper-quoted flag threshold
  int hits = 0;
  for (int run = 0; run < 100; ++run) {
    auto counts = synthlab::poisson_week_matrix(
        derive_seed(42424242, 3, static_cast<std::uint64_t>(run)), -52, 53, 3,
        [](int week, int) { return week >= 0 ? 20.0 : 5.0; });
    ActivityMatrix m;
    m.anchor = 0;
    m.week_lo = -52;
    m.week_hi = 53;
    m.dimensions = {"d0", "d1", "d2"};
    m.counts = counts;
    m.missing_weeks = default_week_mask();
    auto trace = bocpd::detect_changepoints(m, params);
    if (trace.flagged_in(-2, 2)) ++hits;
  }
  c.require(hits >= 95, "flagged in " + std::to_string(hits) + "/100 runs, need >= 95");
  c.require(c.seconds() < 60.0, "power study took " + fmt(c.seconds()) + "s >= 60s");
}

// ---------------------------------------------------------------------------
// 4. DiD recovery, significance, and null uniformity.
// ---------------------------------------------------------------------------

Eigen::MatrixXd poisson_pool(std::uint64_t seed, int users, double pre_rate, double post_rate) {
  Eigen::MatrixXd pool(users, 106);
  Rng rng(seed);
  for (int u = 0; u < users; ++u)
    for (int w = -52; w <= 53; ++w)
      pool(u, w + 52) = static_cast<double>(rng.poisson(w < 0 ? pre_rate : post_rate));
  return pool;
}

did::WeeklySeries series_of(const Eigen::MatrixXd& rows) {
  did::WeeklySeries s;
  s.anchor = 0;
  s.mask = default_week_mask();
  s.values = rows.colwise().mean();
  for (int w : s.mask) s.values(w + 52) = 0.0;
  return s;
}

void criterion_did() {
  Criterion c("did-recovery-and-null");
  // planted shift: delta = -3 on the treatment side, matched-null control
  double did_sum = 0.0;
  int significant = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::uint64_t s = derive_seed(7100, 1, static_cast<std::uint64_t>(seed));
    Eigen::MatrixXd treat = poisson_pool(derive_seed(s, 1), 500, 10.0, 7.0);
    Eigen::MatrixXd ctrl = poisson_pool(derive_seed(s, 2), 500, 10.0, 10.0);
    Eigen::MatrixXd pool = poisson_pool(derive_seed(s, 3), 1200, 10.0, 10.0);
    did::WeeklySeries ts = series_of(treat), cs = series_of(ctrl);
    did::DidParts parts = did::did_statistic(ts, cs);
    did_sum += parts.did;
    auto perm = did::permutation_pvalue_from_pool(pool, 500, cs, parts, 2000, derive_seed(s, 4),
                                                  cs.mask, -52, 53, 2);
    if (perm.p_one_tailed_lower < 0.05) ++significant;
  }
  double mean_did = did_sum / 20.0;
  c.require(std::abs(mean_did - (-3.0)) <= 0.3,
            "mean recovered DiD " + fmt(mean_did) + " outside -3 +- 0.3");
  c.require(significant >= 19,
            "p < 0.05 in only " + std::to_string(significant) + "/20 planted runs");

  // null: p uniform over 200 seeded runs (KS at 0.01)
  std::vector<double> ps;
  for (int run = 0; run < 200; ++run) {
    std::uint64_t s = derive_seed(7200, 2, static_cast<std::uint64_t>(run));
    Eigen::MatrixXd treat = poisson_pool(derive_seed(s, 1), 30, 8.0, 8.0);
    Eigen::MatrixXd ctrl = poisson_pool(derive_seed(s, 2), 30, 8.0, 8.0);
    Eigen::MatrixXd pool = poisson_pool(derive_seed(s, 3), 130, 8.0, 8.0);
    did::WeeklySeries ts = series_of(treat), cs = series_of(ctrl);
    did::DidParts parts = did::did_statistic(ts, cs);
    auto perm = did::permutation_pvalue_from_pool(pool, 30, cs, parts, 199, derive_seed(s, 4),
                                                  cs.mask, -52, 53, 2);
    ps.push_back(perm.p_one_tailed_lower);
  }
  double ks = testsupport::ks_uniform_distance(ps);
  double crit = testsupport::ks_critical_001(ps.size());
  c.require(ks < crit, "null KS distance " + fmt(ks) + " >= " + fmt(crit));
  c.require(c.seconds() < 300.0, "DiD criterion took " + fmt(c.seconds()) + "s >= 5min");
}

// ---------------------------------------------------------------------------
// 5. Tiny-pool permutation vs exhaustive enumeration.
// ---------------------------------------------------------------------------

void criterion_tiny_pool() {
  Criterion c("did-tiny-pool-exhaustive");
  Rng rng(7300);
  Eigen::MatrixXd pool(6, 106);
  for (Eigen::Index r = 0; r < pool.rows(); ++r)
    for (Eigen::Index w = 0; w < pool.cols(); ++w)
      pool(r, w) = static_cast<double>(rng.poisson(6.0));
  did::WeeklySeries ctrl;
  ctrl.anchor = 0;
  ctrl.mask = default_week_mask();
  ctrl.values = Eigen::VectorXd::Constant(106, 6.0);
  for (int w : ctrl.mask) ctrl.values(w + 52) = 0.0;

  auto subset_did = [&](const std::vector<std::size_t>& idx) {
    double pre = 0, post = 0;
    int pre_n = 0, post_n = 0;
    for (int w = -52; w <= 53; ++w) {
      if (ctrl.mask.count(w)) continue;
      double mean = 0;
      for (auto r : idx) mean += pool(static_cast<Eigen::Index>(r), w + 52);
      mean /= static_cast<double>(idx.size());
      if (w < 0) {
        pre += mean - 6.0;
        ++pre_n;
      } else {
        post += mean - 6.0;
        ++post_n;
      }
    }
    return post / post_n - pre / pre_n;
  };
  auto exact = synthlab::oracle_permutation_exact(6, 3, subset_did);
  c.require(exact.size() == 20, "C(6,3) enumeration must yield 20 subsets");
  std::vector<double> sorted_exact = exact;
  std::sort(sorted_exact.begin(), sorted_exact.end());
  // observed statistic strictly between the 6th and 7th enumerated value
  double observed_did = (sorted_exact[5] + sorted_exact[6]) / 2.0;
  double exact_frac = 6.0 / 20.0;

  const int n_sims = 20000;
  did::DidParts observed{0.0, observed_did, observed_did};
  auto perm = did::permutation_pvalue_from_pool(pool, 3, ctrl, observed, n_sims, 31337, ctrl.mask,
                                                -52, 53, 2);
  int below = 0;
  double worst = 0.0;
  for (double d : perm.sim_dids) {
    double nearest = 1e300;
    for (double e : exact) nearest = std::min(nearest, std::abs(d - e));
    worst = std::max(worst, nearest);
    if (d < observed.did) ++below;
  }
  c.require(worst <= 1e-12,
            "simulated DiD deviates from enumerated subset values by " + fmt(worst));
  double expected_p = (static_cast<double>(below) + 1.0) / (n_sims + 1.0);
  c.require(perm.p_one_tailed_lower == expected_p, "returned p is not the add-one smoothed count");
  double margin = 4.0 * std::sqrt(exact_frac * (1 - exact_frac) / n_sims) + 1.0 / (n_sims + 1.0);
  c.require(std::abs(perm.p_one_tailed_lower - exact_frac) <= margin,
            "sampled p " + fmt(perm.p_one_tailed_lower) + " too far from exhaustive fraction " +
                fmt(exact_frac));
}

// ---------------------------------------------------------------------------
// 6. Attrition: monotonicity, planted excess, Monte-Carlo oracle.
// ---------------------------------------------------------------------------

void build_attrition_fixture(const fs::path& dir, int per_group, double treat_rate,
                             double control_rate, std::uint64_t seed,
                             std::vector<std::string>& lines, cohort::Cohort& cohort) {
  const std::int64_t event = 2000LL * kSecondsPerWeek;
  cohort.spec.treatment_subreddit = "treat";
  cohort.spec.event_time = event;
  Rng rng(seed);
  auto add_user = [&](const std::string& name, const std::string& group, double leave_rate) {
    std::int64_t t0 = event - 300 * kSecondsPerDay;
    int pre = 10 + static_cast<int>(rng.below(80));
    for (int i = 0; i < pre; ++i)
      lines.push_back(record_to_json_line(
          {name, group == "treatment" ? "treat" : "ctrl", t0 + i * 900, Kind::comment,
           name + "-pre" + std::to_string(i)}));
    bool leaves = rng.uniform01() < leave_rate;
    int last_week = leaves ? static_cast<int>(rng.below(5)) : 52;
    for (int w = 0; w < last_week; ++w)
      lines.push_back(record_to_json_line({name, "elsewhere",
                                           event + w * kSecondsPerWeek + 7200, Kind::comment,
                                           name + "-post" + std::to_string(w)}));
    if (group == "treatment") {
      cohort.treatment_users.push_back(name);
      cohort.treatment_pre_counts[name] = pre;
    } else if (group == "control_a") {
      cohort.control_a.pairs.push_back({name + "-t", name, 0.0});
      cohort.control_a_counts[name] = pre;
    } else {
      cohort.control_b.pairs.push_back({name + "-t", name, 0.0});
      cohort.control_b_counts[name] = pre;
    }
  };
  for (int i = 0; i < per_group; ++i) {
    add_user("t" + std::to_string(i), "treatment", treat_rate);
    add_user("a" + std::to_string(i), "control_a", control_rate);
    add_user("b" + std::to_string(i), "control_b", control_rate);
  }
  (void)dir;
}

void criterion_attrition() {
  Criterion c("attrition-tests");
  testsupport::TempDir dir("accept-attrition");
  // planted 10% excess attrition at n = 2000 per group
  {
    std::vector<std::string> lines;
    cohort::Cohort cohort;
    build_attrition_fixture(dir.path(), 2000, 0.30, 0.20, 1717, lines, cohort);
    auto input = dir / "fixture.ndjson";
    testsupport::write_lines(input, lines);
    IngestOptions opt;
    opt.threads = 2;
    ingest({{input, Kind::comment}}, opt, dir / "store");
    EventStore store = EventStore::open(dir / "store");
    auto table = attrition::attrition_report(store, cohort, {1, 2, 3, 4}, {10});
    int significant = 0;
    for (const auto& t : table.tests)
      if (t.sig_one_tailed && t.p_two_sided / 2.0 < 0.05) ++significant;
    c.require(significant == static_cast<int>(table.tests.size()),
              "planted excess significant in " + std::to_string(significant) + "/" +
                  std::to_string(table.tests.size()) + " cells");
    // monotonicity across every cell group
    for (const auto& group : {"treatment", "control_a", "control_b"}) {
      double prev = -1.0;
      for (const auto& cell : table.cells) {
        if (cell.group != group) continue;
        c.require(cell.rate >= prev, "rate not monotone in grace for " + cell.group);
        prev = cell.rate;
      }
    }
  }
  // monotonicity on generator-backed synthetic cohorts
  for (std::uint64_t seed : {11ULL, 12ULL}) {
    synthlab::SynthSpec spec;
    spec.seed = seed;
    spec.treatment_users = 60;
    spec.control_users = 150;
    spec.attrition_fraction_treatment = 0.3;
    spec.attrition_fraction_control = 0.1;
    auto out = synthlab::generate(spec, dir / ("corpus" + std::to_string(seed)));
    IngestOptions opt;
    opt.threads = 2;
    ingest({{out.records_path, Kind::comment}}, opt, dir / ("store" + std::to_string(seed)));
    EventStore store = EventStore::open(dir / ("store" + std::to_string(seed)));
    cohort::EventSpec espec;
    espec.treatment_subreddit = spec.treatment_subreddit;
    espec.event_time = spec.event_time;
    cohort::Cohort cohort = cohort::build_cohort(store, espec);
    auto table = attrition::attrition_report(store, cohort);
    std::map<std::pair<std::string, int>, double> prev;
    for (const auto& cell : table.cells) {
      auto key = std::make_pair(cell.group, cell.bracket);
      auto it = prev.find(key);
      if (it != prev.end())
        c.require(cell.rate >= it->second, "rate not monotone in grace (synthetic cohort)");
      prev[key] = cell.rate;
      c.require(cell.inactive <= cell.size, "inactive exceeds group size");
    }
  }
  // two-proportion p vs a 1e6-draw Monte-Carlo oracle on 10 fixed inputs
  {
    struct Input {
      std::int64_t k1, n1, k2, n2;
    };
    const std::vector<Input> inputs = {
        {120, 1000, 80, 1000}, {300, 2000, 240, 2000}, {55, 500, 40, 500},
        {500, 2000, 460, 2000}, {100, 800, 75, 800},   {210, 1500, 180, 1500},
        {90, 600, 70, 600},    {400, 1600, 360, 1600}, {130, 1000, 100, 1000},
        {250, 1250, 225, 1250}};
    std::mt19937_64 mc_rng(987654321);
    for (const auto& in : inputs) {
      auto r = attrition::two_proportion_test(in.k1, in.n1, in.k2, in.n2);
      double pool = static_cast<double>(in.k1 + in.k2) / static_cast<double>(in.n1 + in.n2);
      double obs = std::abs(static_cast<double>(in.k1) / in.n1 - static_cast<double>(in.k2) / in.n2);
      std::binomial_distribution<std::int64_t> b1(in.n1, pool), b2(in.n2, pool);
      double hits = 0;
      const int draws = 1000000;
      for (int i = 0; i < draws; ++i) {
        double diff =
            std::abs(static_cast<double>(b1(mc_rng)) / in.n1 - static_cast<double>(b2(mc_rng)) / in.n2);
        if (diff > obs + 1e-12) hits += 1.0;
        else if (std::abs(diff - obs) <= 1e-12) hits += 0.5;
      }
      double mc = hits / draws;
      c.require(std::abs(r.p_two_sided - mc) <= 0.002,
                "MC oracle gap " + fmt(std::abs(r.p_two_sided - mc)) + " on (" +
                    std::to_string(in.k1) + "," + std::to_string(in.n1) + "," +
                    std::to_string(in.k2) + "," + std::to_string(in.n2) + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// 7. Matching criteria.
// ---------------------------------------------------------------------------

std::vector<cohort::LabelledVector> random_vectors(Rng& rng, const std::string& prefix, int n) {
  std::vector<cohort::LabelledVector> out;
  for (int i = 0; i < n; ++i)
    out.emplace_back(prefix + std::to_string(i),
                     Eigen::Vector3d(rng.uniform01() * 5, rng.uniform01() * 5, rng.uniform01() * 5));
  return out;
}

void criterion_matching() {
  Criterion c("matching-tests");
  Rng rng(8800);
  // identity covariance reduces to Euclidean nearest neighbour (oracle replay)
  for (int trial = 0; trial < 20; ++trial) {
    auto treat = random_vectors(rng, "t", 6);
    auto cands = random_vectors(rng, "c", 9);
    auto got = cohort::greedy_match(treat, cands, Eigen::Matrix3d::Identity());
    // independent replay with plain Euclidean arithmetic
    std::vector<bool> tu(treat.size(), false), cu(cands.size(), false);
    std::vector<cohort::MatchedPair> want;
    for (std::size_t round = 0; round < treat.size(); ++round) {
      double bd = 0;
      std::size_t bt = treat.size(), bc = cands.size();
      for (std::size_t t = 0; t < treat.size(); ++t) {
        if (tu[t]) continue;
        for (std::size_t k = 0; k < cands.size(); ++k) {
          if (cu[k]) continue;
          double d = (treat[t].second - cands[k].second).norm();
          bool better = bt == treat.size() || d < bd ||
                        (d == bd && (treat[t].first < treat[bt].first ||
                                     (treat[t].first == treat[bt].first &&
                                      cands[k].first < cands[bc].first)));
          if (better) {
            bd = d;
            bt = t;
            bc = k;
          }
        }
      }
      if (bt == treat.size()) break;
      tu[bt] = true;
      cu[bc] = true;
      want.push_back({treat[bt].first, cands[bc].first, bd});
    }
    std::sort(want.begin(), want.end(), [](const auto& a, const auto& b) {
      return a.treatment_user < b.treatment_user;
    });
    bool same = got.pairs.size() == want.size();
    for (std::size_t i = 0; same && i < want.size(); ++i)
      same = got.pairs[i].treatment_user == want[i].treatment_user &&
             got.pairs[i].control_user == want[i].control_user &&
             std::abs(got.pairs[i].distance - want[i].distance) < 1e-12;
    c.require(same, "identity-covariance matching differs from the Euclidean replay (trial " +
                        std::to_string(trial) + ")");
  }
  // affine invariance
  for (int trial = 0; trial < 10; ++trial) {
    auto treat = random_vectors(rng, "t", 6);
    auto cands = random_vectors(rng, "c", 12);
    auto base = cohort::mahalanobis_match(treat, cands);
    Eigen::Matrix3d a;
    do {
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) a(r, k) = 2.0 * rng.uniform01() - 1.0;
    } while (std::abs(a.determinant()) < 0.2);
    Eigen::Vector3d b(rng.uniform01(), rng.uniform01(), rng.uniform01());
    auto map = [&](std::vector<cohort::LabelledVector> v) {
      for (auto& [_, x] : v) x = a * x + b;
      return v;
    };
    auto mapped = cohort::mahalanobis_match(map(treat), map(cands));
    bool same = base.pairs.size() == mapped.pairs.size();
    for (std::size_t i = 0; same && i < base.pairs.size(); ++i)
      same = base.pairs[i].treatment_user == mapped.pairs[i].treatment_user &&
             base.pairs[i].control_user == mapped.pairs[i].control_user;
    c.require(same, "matched pairs changed under a common affine map (trial " +
                        std::to_string(trial) + ")");
  }
  // determinism under input permutation
  for (int trial = 0; trial < 5; ++trial) {
    auto treat = random_vectors(rng, "t", 7);
    auto cands = random_vectors(rng, "c", 11);
    auto base = cohort::mahalanobis_match(treat, cands);
    for (int shuffle = 0; shuffle < 4; ++shuffle) {
      auto t2 = treat;
      auto c2 = cands;
      for (std::size_t i = 0; i + 1 < t2.size(); ++i)
        std::swap(t2[i], t2[i + rng.below(t2.size() - i)]);
      for (std::size_t i = 0; i + 1 < c2.size(); ++i)
        std::swap(c2[i], c2[i + rng.below(c2.size() - i)]);
      auto r = cohort::mahalanobis_match(t2, c2);
      bool same = base.pairs.size() == r.pairs.size();
      for (std::size_t i = 0; same && i < base.pairs.size(); ++i)
        same = base.pairs[i].treatment_user == r.pairs[i].treatment_user &&
               base.pairs[i].control_user == r.pairs[i].control_user;
      c.require(same, "matching depends on input order");
    }
  }
}

// ---------------------------------------------------------------------------
// 8. Predictor criteria.
// ---------------------------------------------------------------------------

void criterion_predictor() {
  Criterion c("predictor-tests");
  // finite-difference gradients at 3 random parameter points
  Rng rng(9900);
  for (int point = 0; point < 3; ++point) {
    predictor::MlpModel m;
    m.config.hidden = 5;
    auto fill_m = [&](Eigen::MatrixXd& w, int r, int k) {
      w.resize(r, k);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 1.2 * (2 * rng.uniform01() - 1);
    };
    fill_m(m.w1, 5, 6);
    fill_m(m.w2, 5, 5);
    fill_m(m.w3, 2, 5);
    auto fill_v = [&](Eigen::VectorXd& v, int n) {
      v.resize(n);
      for (int i = 0; i < n; ++i) v(i) = 0.4 * (2 * rng.uniform01() - 1);
    };
    fill_v(m.b1, 5);
    fill_v(m.b2, 5);
    fill_v(m.b3, 2);
    Eigen::MatrixXd x(8, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * rng.uniform01();
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(8, 2);
    for (int i = 0; i < 8; ++i) t(i, i % 2) = 1.0;

    predictor::MlpModel grad = m;
    predictor::loss_and_gradients(m, x, t, &grad);
    double worst = 0.0;
    const double eps = 1e-5;
    auto probe = [&](double* p, double analytic) {
      double keep = *p;
      *p = keep + eps;
      double hi = predictor::loss_and_gradients(m, x, t, nullptr);
      *p = keep - eps;
      double lo = predictor::loss_and_gradients(m, x, t, nullptr);
      *p = keep;
      double fd = (hi - lo) / (2 * eps);
      worst = std::max(worst, std::abs(analytic - fd) /
                                  std::max({std::abs(analytic), std::abs(fd), 1e-6}));
    };
    for (Eigen::Index i = 0; i < m.w1.size(); ++i) probe(m.w1.data() + i, grad.w1.data()[i]);
    for (Eigen::Index i = 0; i < m.w2.size(); ++i) probe(m.w2.data() + i, grad.w2.data()[i]);
    for (Eigen::Index i = 0; i < m.w3.size(); ++i) probe(m.w3.data() + i, grad.w3.data()[i]);
    for (Eigen::Index i = 0; i < m.b1.size(); ++i) probe(m.b1.data() + i, grad.b1.data()[i]);
    for (Eigen::Index i = 0; i < m.b2.size(); ++i) probe(m.b2.data() + i, grad.b2.data()[i]);
    for (Eigen::Index i = 0; i < m.b3.size(); ++i) probe(m.b3.data() + i, grad.b3.data()[i]);
    c.require(worst < 1e-4, "gradient relative error " + fmt(worst) + " at point " +
                                std::to_string(point));
  }

  // AUC equals all-pairs brute force on 30-sample sets
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    int pos = 0;
    for (int i = 0; i < 30; ++i) {
      scores.push_back(static_cast<double>(rng.below(10)) / 10.0);
      labels.push_back(rng.below(2) ? 1 : 0);
      pos += labels.back();
    }
    if (pos == 0) labels[0] = 1;
    if (pos == 30) labels[0] = 0;
    double wins = 0, ties = 0, total = 0;
    for (int i = 0; i < 30; ++i) {
      if (!labels[i]) continue;
      for (int j = 0; j < 30; ++j) {
        if (labels[j]) continue;
        total += 1;
        if (scores[i] > scores[j]) wins += 1;
        else if (scores[i] == scores[j]) ties += 1;
      }
    }
    double want = (wins + 0.5 * ties) / total;
    double got = predictor::auc(scores, labels);
    c.require(std::abs(got - want) < 1e-12, "AUC differs from all-pairs brute force");
  }

  // linearly separable planted cohort: store-backed CV AUC >= 0.95 on 5 seeds
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    testsupport::TempDir dir("accept-pred-" + std::to_string(seed));
    synthlab::SynthSpec spec;
    spec.seed = seed;
    spec.treatment_users = 100;
    spec.control_users = 0;
    spec.attrition_fraction_treatment = 0.5;
    spec.leaver_signal_rate = 8.0;
    auto out = synthlab::generate(spec, dir / "corpus");
    IngestOptions opt;
    opt.threads = 2;
    ingest({{out.records_path, Kind::comment}}, opt, dir / "store");
    EventStore store = EventStore::open(dir / "store");
    cohort::Cohort cohort;
    cohort.spec.treatment_subreddit = spec.treatment_subreddit;
    cohort.spec.event_time = spec.event_time;
    cohort.treatment_users = out.truth.treatment_users;
    auto [space, data] = predictor::build_features(store, cohort);
    predictor::MlpConfig config;
    config.hidden = 16;
    config.epochs = 120;
    config.learning_rate = 0.05;
    config.seed = seed;
    auto cv = predictor::cross_validate(data.features, data.labels, 5, config);
    c.require(cv.mean_auc >= 0.95,
              "separable CV AUC " + fmt(cv.mean_auc) + " < 0.95 at seed " + std::to_string(seed));
  }

  // degenerate transfer: disjoint vocabularies give AUC exactly 0.5
  {
    testsupport::TempDir dir("accept-pred-transfer");
    const std::int64_t event = 2000LL * kSecondsPerWeek;
    std::vector<std::string> train_lines, eval_lines;
    cohort::Cohort train_c, eval_c;
    train_c.spec.treatment_subreddit = "treat";
    train_c.spec.event_time = event;
    eval_c.spec = train_c.spec;
    std::int64_t w0 = event - 150 * kSecondsPerDay;
    for (int i = 0; i < 30; ++i) {
      std::string u = "tr" + std::to_string(i);
      train_c.treatment_users.push_back(u);
      for (int k = 0; k < 12; ++k)
        train_lines.push_back(record_to_json_line(
            {u, "fruit" + std::to_string(k % 3), w0 + k, Kind::comment, u + "f" + std::to_string(k)}));
      if (i % 2)
        train_lines.push_back(record_to_json_line(
            {u, "fruit0", event + 40 * kSecondsPerDay, Kind::comment, u + "-post"}));
    }
    for (int i = 0; i < 20; ++i) {
      std::string u = "ev" + std::to_string(i);
      eval_c.treatment_users.push_back(u);
      for (int k = 0; k < 12; ++k)
        eval_lines.push_back(record_to_json_line(
            {u, "veg" + std::to_string(k % 3), w0 + k, Kind::comment, u + "v" + std::to_string(k)}));
      if (i % 2)
        eval_lines.push_back(record_to_json_line(
            {u, "veg0", event + 40 * kSecondsPerDay, Kind::comment, u + "-post"}));
    }
    std::sort(train_c.treatment_users.begin(), train_c.treatment_users.end());
    std::sort(eval_c.treatment_users.begin(), eval_c.treatment_users.end());
    testsupport::write_lines(dir / "train.ndjson", train_lines);
    testsupport::write_lines(dir / "eval.ndjson", eval_lines);
    ingest({{dir / "train.ndjson", Kind::comment}}, IngestOptions{}, dir / "train_store");
    ingest({{dir / "eval.ndjson", Kind::comment}}, IngestOptions{}, dir / "eval_store");
    EventStore train_store = EventStore::open(dir / "train_store");
    EventStore eval_store = EventStore::open(dir / "eval_store");
    predictor::MlpConfig config;
    config.hidden = 8;
    config.epochs = 30;
    auto m = predictor::transfer_eval(train_store, train_c, eval_store, eval_c, config);
    c.require(m.auc == 0.5, "degenerate transfer AUC " + fmt(m.auc) + " != 0.5");
  }
}

// ---------------------------------------------------------------------------
// 9. Ingestion performance, memory independence, thread determinism.
// ---------------------------------------------------------------------------

void criterion_ingestion(const std::string& cli) {
  Criterion c("ingestion-performance");
  testsupport::TempDir dir("accept-ingest");
  synthlab::SynthSpec big;
  big.seed = 900;
  big.treatment_users = 1200;
  big.control_users = 1800;
  big.rate_treatment_background = 2.5;
  big.rate_control_background = 2.5;
  auto big_out = synthlab::generate(big, dir / "big");
  c.require(big_out.truth.record_count >= 1000000,
            "big corpus has " + std::to_string(big_out.truth.record_count) + " records, need >= 1e6");
  synthlab::SynthSpec small = big;
  small.seed = 901;
  small.treatment_users = 120;
  small.control_users = 180;
  auto small_out = synthlab::generate(small, dir / "small");

  auto t0 = Clock::now();
  auto big1 = testsupport::run_cli(
      cli, {"ingest", "--input", "big/records.ndjson", "--out", "store1", "--threads", "1"},
      dir.path());
  double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  c.require(big1.exit_code == 0, "1-thread ingest failed: " + big1.output);
  double rate = static_cast<double>(big_out.truth.record_count) / wall;
  c.require(rate >= 50000.0, "throughput " + fmt(rate) + " records/s/core < 50k");

  auto small1 = testsupport::run_cli(
      cli, {"ingest", "--input", "small/records.ndjson", "--out", "store_small", "--threads", "1"},
      dir.path());
  c.require(small1.exit_code == 0, "small ingest failed");
  double ratio = static_cast<double>(big1.max_rss_kb) / static_cast<double>(small1.max_rss_kb);
  c.require(ratio <= 1.10 && ratio >= 1.0 / 1.10,
            "peak memory ratio 1e6/1e5 = " + fmt(ratio) + " outside +-10% (" +
                std::to_string(big1.max_rss_kb) + "kB vs " + std::to_string(small1.max_rss_kb) +
                "kB)");

  auto big8 = testsupport::run_cli(
      cli, {"ingest", "--input", "big/records.ndjson", "--out", "store8", "--threads", "8"},
      dir.path());
  c.require(big8.exit_code == 0, "8-thread ingest failed");
  c.require(testsupport::read_file(dir.path() / "store1" / "manifest.json") ==
                testsupport::read_file(dir.path() / "store8" / "manifest.json"),
            "1-thread vs 8-thread manifests differ");
}

// ---------------------------------------------------------------------------
// 10. End-to-end CLI pipeline with provenance headers.
// ---------------------------------------------------------------------------

void criterion_end_to_end(const std::string& cli) {
  Criterion c("end-to-end-pipeline");
  testsupport::TempDir dir("accept-e2e");
  {
    std::ofstream spec(dir / "spec.json");
    spec << R"({"seed": 5150, "event_time": 1600000000,
      "treatment_users": 80, "control_users": 200,
      "attrition": {"treatment_fraction": 0.25, "control_fraction": 0.05},
      "leaver_signal_rate": 6.0, "did_shift": -1.5,
      "changepoints": [{"week": 0, "rate_multiplier": 4.0, "affected_fraction": 0.3,
                        "group": "treatment"}]})";
  }
  auto run = [&](const std::vector<std::string>& args) {
    auto r = testsupport::run_cli(cli, args, dir.path());
    c.require(r.exit_code == 0,
              "command failed (" + args[0] + "): " + r.output.substr(0, 300));
    return r;
  };
  run({"synth", "--spec", "spec.json", "--out", "corpus"});
  run({"ingest", "--input", "corpus/records.ndjson", "--out", "store", "--threads", "2"});
  run({"cohort", "--store", "store", "--subreddit", "treatsub", "--event", "1600000000", "--out",
       "cohort.json"});
  run({"attrition", "--cohort", "cohort.json", "--out", "attrition.csv"});
  run({"did", "--cohort", "cohort.json", "--sims", "2000", "--seed", "9", "--threads", "2",
       "--out", "did"});
  run({"changepoint", "--cohort", "cohort.json", "--beta0", "0.1", "--threads", "2", "--out",
       "cp"});
  run({"predict", "--train", "cohort.json", "--cv", "5", "--hidden", "16", "--epochs", "80",
       "--lr", "0.05", "--out", "pred"});

  auto has_csv_prov = [&](const std::string& name) {
    std::ifstream in(dir.path() / name);
    std::string first;
    std::getline(in, first);
    c.require(first.rfind("# command: ", 0) == 0, name + " lacks a provenance header");
  };
  auto has_json_prov = [&](const std::string& name) {
    auto text = testsupport::read_file(dir.path() / name);
    c.require(text.find("\"provenance\"") != std::string::npos &&
                  text.find("\"command\"") != std::string::npos,
              name + " lacks a provenance object");
  };
  has_json_prov("corpus/synth_report.json");
  has_json_prov("store/ingest_report.json");
  has_json_prov("cohort.json");
  has_csv_prov("attrition.csv");
  has_json_prov("did.json");
  has_csv_prov("did_series.csv");
  has_csv_prov("cp_rates.csv");
  has_json_prov("cp_band.json");
  has_csv_prov("cp_window.csv");
  has_csv_prov("pred_metrics.csv");
  has_json_prov("pred_model.json");
  c.require(c.seconds() < 600.0, "pipeline took " + fmt(c.seconds()) + "s >= 10min");
}

}  // namespace

int main() {
  const std::string cli = SHOCKKIT_CLI_PATH;
  std::printf("shockkit acceptance suite\n");
  criterion_bocpd_oracle();
  criterion_bocpd_power();
  criterion_did();
  criterion_tiny_pool();
  criterion_attrition();
  criterion_matching();
  criterion_predictor();
  criterion_ingestion(cli);
  criterion_end_to_end(cli);
  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d criterion group(s) failed\n", g_failures);
  return 1;
}
