#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shockkit/activity_matrix.hpp"
#include "shockkit/attrition.hpp"
#include "shockkit/cohort.hpp"
#include "shockkit/event_store.hpp"

namespace shockkit::bocpd {

struct BocpdParams {
  double alpha0 = 1.0;
  double beta0 = 1.0;
  double hazard = 0.01;
  double threshold = 0.90;
  // Run-length components below this mass are dropped and the rest
  // renormalized, keeping each step O(active run lengths).
  double truncation = 1e-12;

  void validate() const;
};

/// Online run-length filter over weekly count vectors. Dimensions share one
/// run length; per dimension the rate is Gamma-Poisson conjugate, so the
/// one-step predictive is a product of negative-binomial marginals. A
/// changepoint at step t means y_t opens a fresh segment: the reset branch
/// scores y_t under the Gamma(alpha0, beta0) prior predictive and the new
/// run absorbs it. The returned probability is the posterior mass at run
/// length zero, p(r_t = 0 | y_1..y_t); at t = 1 it equals the hazard exactly.
class RunLengthFilter {
 public:
  RunLengthFilter(int dims, const BocpdParams& params);

  /// Consumes one observation, returns p(r_t = 0 | y_1..y_t).
  double step(const Eigen::VectorXi& y);

  int time() const { return time_; }
  /// Normalized run-length distribution; entry r is p(r_t = r). Truncated
  /// components report zero.
  Eigen::VectorXd run_length_distribution() const;
  /// log p(r_t = r, y_1..y_t) for surviving components (joint, unnormalized
  /// by the data evidence); truncated components report -inf.
  Eigen::VectorXd log_joint() const;
  /// Worst |sum - 1| observed after any normalization so far.
  double max_normalization_drift() const { return max_drift_; }

 private:
  struct Component {
    double logw;          // normalized log posterior mass
    int run_length;
    int n;                // observations absorbed
    Eigen::VectorXd sums; // per-dimension count sums
  };

  int dims_;
  BocpdParams params_;
  int time_ = 0;
  double log_evidence_ = 0.0;
  double max_drift_ = 0.0;
  std::vector<Component> components_;
};

struct ChangepointTrace {
  std::vector<int> weeks;          // unmasked weeks, in order
  Eigen::VectorXd probabilities;   // p(r = 0) per entry of `weeks`
  std::vector<int> flagged_weeks;  // weeks with probability >= threshold
  double max_normalization_drift = 0.0;

  bool flagged_in(int week_lo, int week_hi) const;
};

/// Runs the filter over the matrix's weeks in order; masked weeks are
/// skipped entirely (no hazard applied).
ChangepointTrace detect_changepoints(const ActivityMatrix& matrix, const BocpdParams& params);

/// Per-user dimensions: subreddits with any record in the span, capped at the
/// `max_dims` largest by count (ties lexicographic); the remainder pools into
/// a single "__other__" column.
ActivityMatrix build_user_matrix(const EventStore& store, std::string_view user, std::int64_t anchor,
                                 int week_lo = -52, int week_hi = 53,
                                 std::set<int> missing_weeks = default_week_mask(),
                                 int max_dims = 200);

struct GroupRates {
  std::string group;
  int n_users = 0;
  std::vector<int> weeks;
  Eigen::VectorXd fraction_flagged;  // per entry of `weeks`
};

struct CohortRates {
  std::vector<GroupRates> groups;  // treatment, control_a, control_b
  // Control band: mean + 3*stddev of the control group's weekly fractions.
  std::map<std::string, double> band;
};

CohortRates cohort_changepoint_rates(const EventStore& store, const cohort::Cohort& cohort,
                                     const BocpdParams& params, int threads = 1);

struct WindowRateCell {
  std::string group;
  int bracket = 0;
  std::int64_t flagged = 0;
  std::int64_t size = 0;
  double rate = 0.0;
};

struct WindowRateComparison {
  int bracket = 0;
  std::string control;
  double z = 0.0;
  double p_two_sided = 1.0;
  bool sig_one_tailed = false;
};

struct WindowRateTable {
  std::vector<int> edges;
  int window_weeks = 4;
  std::vector<WindowRateCell> cells;
  std::vector<WindowRateComparison> tests;
};

/// Probability a user has at least one flagged week within +-window_weeks of
/// the event, stratified by activity bracket, with one-tailed two-proportion
/// significance against each control.
WindowRateTable changepoint_window_rate(const EventStore& store, const cohort::Cohort& cohort,
                                        const BocpdParams& params, int window_weeks = 4,
                                        const std::vector<int>& edges = attrition::kDefaultBracketEdges,
                                        int threads = 1);

}  // namespace shockkit::bocpd
