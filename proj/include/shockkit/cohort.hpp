#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shockkit/event_store.hpp"
#include "shockkit/util.hpp"

namespace shockkit::cohort {

struct EventSpec {
  std::string treatment_subreddit;
  std::int64_t event_time = 0;
  int min_activity = 10;
  std::int64_t pre_window_s = 365 * kSecondsPerDay;
  std::int64_t post_window_s = 365 * kSecondsPerDay;

  void validate() const;
  std::int64_t pre_start() const { return event_time - pre_window_s; }
};

/// ln(1+x) covariates used by the matcher.
struct MatchVector {
  double log_account_age = 0.0;      // days since first observed record
  double log_karma = 0.0;            // sidecar karma proxy, 0 when absent
  double log_posts_last_year = 0.0;  // pre-window record count

  Eigen::Vector3d as_vector() const {
    return Eigen::Vector3d(log_account_age, log_karma, log_posts_last_year);
  }
};

/// Optional sidecar table: user,karma CSV.
std::map<std::string, double> load_karma_csv(const std::filesystem::path& path);

MatchVector covariates(const EventStore& store, std::string_view user, const EventSpec& spec,
                       const std::map<std::string, double>& karma);

/// Users with >= min_activity records in the treatment subreddit during the
/// pre-window. Sorted by name.
std::vector<std::string> treatment_users(const EventStore& store, const EventSpec& spec);

enum class ControlSubredditRule {
  // >= 10 distinct treatment users, each with >= 10 pre-window records.
  per_user_min,
  // >= 10 distinct treatment users and >= 10 treatment records in total.
  total_posts,
};

/// Candidate control subreddits ranked descending by the fraction of
/// pre-window contributors that are treatment users (ties lexicographic),
/// truncated to max_count.
std::vector<std::string> control_subreddits_a(const EventStore& store,
                                              const std::vector<std::string>& treatment,
                                              const EventSpec& spec,
                                              ControlSubredditRule rule = ControlSubredditRule::per_user_min,
                                              int max_count = 200);

/// Control-A candidates: active (>= min_activity pre-window records) in any
/// control subreddit, never active in the treatment subreddit. Maps user to
/// the largest per-control-subreddit pre-window count (the bracket context).
std::map<std::string, int> candidate_control_users_a(const EventStore& store,
                                                     const std::vector<std::string>& control_subs,
                                                     const EventSpec& spec);

/// Control-B candidates: same rule against a single hub subreddit.
std::map<std::string, int> candidate_control_users_b(const EventStore& store, const EventSpec& spec,
                                                     std::string_view hub = "AskReddit");

// ---------------------------------------------------------------------------
// Mahalanobis matching
// ---------------------------------------------------------------------------

struct MatchedPair {
  std::string treatment_user;
  std::string control_user;
  double distance = 0.0;
};

struct MatchResult {
  std::vector<MatchedPair> pairs;
  std::vector<std::string> unmatched_treatment;
};

using LabelledVector = std::pair<std::string, Eigen::Vector3d>;

/// Greedy nearest-neighbour matching without replacement under a fixed
/// metric: repeatedly assigns the globally closest (treatment, candidate)
/// pair, ties broken by (distance, treatment id, candidate id).
/// `metric` is the inverse covariance; distance = sqrt(d' M d).
MatchResult greedy_match(const std::vector<LabelledVector>& treatment,
                         const std::vector<LabelledVector>& candidates,
                         const Eigen::Matrix3d& metric);

/// Sample covariance (n-1 denominator) of the candidate pool plus
/// eps*I regularization, eps = 1e-8 * trace/3. Falls back to identity when
/// fewer than two candidates exist.
Eigen::Matrix3d candidate_covariance(const std::vector<LabelledVector>& candidates);

/// Full matcher: estimates the covariance from the candidate pool, inverts,
/// and runs greedy matching. Throws if the regularized covariance is singular.
MatchResult mahalanobis_match(const std::vector<LabelledVector>& treatment,
                              const std::vector<LabelledVector>& candidates);

// ---------------------------------------------------------------------------
// Cohort
// ---------------------------------------------------------------------------

struct Cohort {
  EventSpec spec;
  std::string hub_subreddit = "AskReddit";
  std::vector<std::string> treatment_users;
  std::map<std::string, int> treatment_pre_counts;  // in treatment subreddit
  std::vector<std::string> control_subreddits;
  MatchResult control_a;
  MatchResult control_b;
  std::map<std::string, int> control_a_counts;  // bracket context of matched A users
  std::map<std::string, int> control_b_counts;
  std::vector<std::string> unmatched_pool_a;  // Control-A candidates left unmatched
  std::string store_path;
  std::string store_checksum;

  std::vector<std::string> matched_controls_a() const;
  std::vector<std::string> matched_controls_b() const;

  std::string to_json(const Provenance& prov) const;
  static Cohort from_json_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path, const Provenance& prov) const;
};

struct CohortOptions {
  ControlSubredditRule rule = ControlSubredditRule::per_user_min;
  int max_control_subreddits = 200;
  std::string hub_subreddit = "AskReddit";
  std::map<std::string, double> karma;
};

Cohort build_cohort(const EventStore& store, const EventSpec& spec, const CohortOptions& options = {});

}  // namespace shockkit::cohort
