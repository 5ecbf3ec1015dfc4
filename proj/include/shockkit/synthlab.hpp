#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shockkit/record.hpp"
#include "shockkit/util.hpp"

namespace shockkit::synthlab {

// ---------------------------------------------------------------------------
// Seeded synthetic corpus generator. Weekly Poisson counts expanded to
// timestamped records, with planted ground truth for every effect.
// ---------------------------------------------------------------------------

struct ChangepointInjection {
  int week = 0;
  double rate_multiplier = 4.0;
  double affected_fraction = 0.0;
  std::string group = "treatment";  // treatment | control
};

struct SynthSpec {
  std::uint64_t seed = 1;
  std::int64_t event_time = 1600000000;
  int weeks_before = 53;  // records span [event - weeks_before*7d, event + weeks_after*7d)
  int weeks_after = 54;
  std::string treatment_subreddit = "treatsub";
  std::string hub_subreddit = "AskReddit";
  int control_subreddit_count = 6;
  int background_subreddit_count = 4;
  int treatment_users = 100;
  int control_users = 200;

  // Weekly Poisson rates.
  double rate_treatment_in_treatment = 0.5;
  double rate_treatment_in_control = 0.35;   // in each of 2 assigned control subreddits
  double rate_treatment_background = 1.5;    // spread over assigned background subreddits
  double rate_treatment_in_hub = 0.2;
  double rate_control_in_control = 0.35;
  double rate_control_in_hub = 0.4;
  double rate_control_background = 1.5;

  bool ban_treatment_subreddit = true;  // treatment-subreddit rate drops to 0 post event

  // Planted effects.
  double attrition_fraction_treatment = 0.0;
  double attrition_fraction_control = 0.0;
  int attrition_min_departure_week = 0;
  int attrition_max_departure_week = 4;
  // Pre-event weekly rate of leavers in the "signal000" subreddit; gives the
  // attrition classifier a separable planted feature when nonzero.
  double leaver_signal_rate = 0.0;
  double did_shift = 0.0;  // additive per-week platform shift on treatment users post event
  std::vector<ChangepointInjection> changepoints;

  double comment_fraction = 0.7;

  static SynthSpec from_json_file(const std::filesystem::path& path);
  std::string to_json() const;
};

struct GroundTruth {
  std::vector<std::string> treatment_users;       // all generated treatment-role users
  std::vector<std::string> qualifying_treatment;  // >= 10 records in treatment sub, pre-window
  std::vector<std::string> control_users;
  std::map<std::string, int> leavers;             // user -> departure week
  std::vector<std::string> did_shifted;
  std::vector<std::string> changepoint_users;
  std::uint64_t record_count = 0;
  std::map<std::string, std::uint64_t> subreddit_counts;

  std::string to_json() const;
};

struct SynthOutput {
  GroundTruth truth;
  std::filesystem::path records_path;
  std::filesystem::path truth_path;
};

/// Writes records.ndjson (canonical order) and ground_truth.json under out_dir.
SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// In-memory helpers used by the statistical test batteries (no store I/O).
// ---------------------------------------------------------------------------

/// Poisson weekly count matrix (weeks x dims); rates may vary by week via
/// `rate_of(week_index, dim)`. Weeks indexed week_lo..week_hi inclusive.
Eigen::MatrixXi poisson_week_matrix(std::uint64_t seed, int week_lo, int week_hi, int dims,
                                    const std::function<double(int, int)>& rate_of);

// ---------------------------------------------------------------------------
// Independent brute-force oracles. These deliberately share no code with the
// modules they check.
// ---------------------------------------------------------------------------

/// Exact filtering changepoint probabilities p(r_t = 0 | y_1..y_t) by
/// enumerating every segmentation of each prefix (2^(t-1) of them) under the
/// constant-hazard geometric segment prior and Gamma-Poisson block marginals.
/// series is (weeks x dims); requires T <= 12.
Eigen::VectorXd oracle_changepoint_exact(const Eigen::MatrixXi& series, double alpha0, double beta0,
                                         double hazard);

/// Statistic evaluated on every size-k subset of {0..n-1}; the exact null
/// distribution for subset-sampling permutation tests. C(n,k) must be <= 1e6.
std::vector<double> oracle_permutation_exact(
    std::size_t n, std::size_t k, const std::function<double(const std::vector<std::size_t>&)>& statistic);

/// Single-pass reference recount over raw NDJSON lines: records by `user` in
/// [t0, t1), optionally restricted to one subreddit. Lines that do not parse
/// are skipped, mirroring ingest's recoverable-error rule.
std::int64_t oracle_recount(const std::vector<std::string>& ndjson_lines, std::string_view user,
                            std::int64_t t0, std::int64_t t1,
                            std::optional<std::string_view> subreddit = std::nullopt);

/// Reference weekly binning: per-record week assignment against an anchor.
/// Returns week -> count for `user`, optionally restricted to one subreddit.
std::map<int, std::int64_t> oracle_weekly_recount(const std::vector<std::string>& ndjson_lines,
                                                  std::string_view user, std::int64_t anchor,
                                                  std::optional<std::string_view> subreddit = std::nullopt);

}  // namespace shockkit::synthlab
