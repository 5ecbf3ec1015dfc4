#include "shockkit/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace shockkit::cohort {

using nlohmann::json;

void EventSpec::validate() const {
  if (treatment_subreddit.empty()) throw DataError("event spec: treatment subreddit is empty");
  if (min_activity < 1) throw DataError("event spec: min_activity must be >= 1");
  if (pre_window_s <= 0 || post_window_s <= 0) throw DataError("event spec: windows must be > 0");
}

std::map<std::string, double> load_karma_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read karma sidecar: " + path.string());
  std::map<std::string, double> karma;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto comma = line.rfind(',');
    if (comma == std::string::npos) throw DataError("karma sidecar: malformed line: " + line);
    std::string user = line.substr(0, comma);
    std::string value = line.substr(comma + 1);
    if (!value.empty() && value.back() == '\r') value.pop_back();
    if (first && user == "user") {  // optional header
      first = false;
      continue;
    }
    first = false;
    try {
      karma[user] = std::stod(value);
    } catch (...) {
      throw DataError("karma sidecar: bad karma value: " + value);
    }
  }
  return karma;
}

MatchVector covariates(const EventStore& store, std::string_view user, const EventSpec& spec,
                       const std::map<std::string, double>& karma) {
  MatchVector v;
  auto first = store.first_event_ts(user);
  double age_days = 0.0;
  if (first && *first < spec.event_time)
    age_days = static_cast<double>(spec.event_time - *first) / static_cast<double>(kSecondsPerDay);
  v.log_account_age = std::log1p(age_days);
  auto it = karma.find(std::string(user));
  double k = it == karma.end() ? 0.0 : std::max(0.0, it->second);
  v.log_karma = std::log1p(k);
  std::int64_t posts = store.user_activity_count(user, spec.pre_start(), spec.event_time);
  v.log_posts_last_year = std::log1p(static_cast<double>(posts));
  return v;
}

std::vector<std::string> treatment_users(const EventStore& store, const EventSpec& spec) {
  spec.validate();
  std::vector<std::string> out;
  auto sid = store.subreddit_id(spec.treatment_subreddit);
  if (!sid) return out;
  const auto& events = store.subreddit_events(*sid);
  std::map<std::uint32_t, int> counts;
  auto lo = std::lower_bound(events.begin(), events.end(), spec.pre_start(),
                             [](const EventStore::SubEvent& e, std::int64_t t) { return e.ts < t; });
  for (auto it = lo; it != events.end() && it->ts < spec.event_time; ++it) ++counts[it->author];
  for (const auto& [aid, n] : counts)
    if (n >= spec.min_activity) out.push_back(store.author_name(aid));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> control_subreddits_a(const EventStore& store,
                                              const std::vector<std::string>& treatment,
                                              const EventSpec& spec, ControlSubredditRule rule,
                                              int max_count) {
  if (treatment.empty()) throw DataError("control_subreddits_a requires a nonempty treatment set");
  std::set<std::uint32_t> treat_ids;
  for (const auto& u : treatment) {
    auto aid = store.author_id(u);
    if (aid) treat_ids.insert(*aid);
  }
  auto treatment_sid = store.subreddit_id(spec.treatment_subreddit);

  struct Ranked {
    double pct;
    std::string name;
  };
  std::vector<Ranked> ranked;
  for (std::uint32_t sid = 0; sid < store.subreddit_count(); ++sid) {
    if (treatment_sid && sid == *treatment_sid) continue;
    const auto& events = store.subreddit_events(sid);
    auto lo = std::lower_bound(events.begin(), events.end(), spec.pre_start(),
                               [](const EventStore::SubEvent& e, std::int64_t t) { return e.ts < t; });
    std::map<std::uint32_t, int> contributors;
    for (auto it = lo; it != events.end() && it->ts < spec.event_time; ++it) ++contributors[it->author];
    int treat_contributors = 0;
    int treat_active = 0;  // treatment users with >= 10 records here
    long treat_posts = 0;
    for (const auto& [aid, n] : contributors) {
      if (!treat_ids.count(aid)) continue;
      ++treat_contributors;
      treat_posts += n;
      if (n >= 10) ++treat_active;
    }
    bool qualifies = rule == ControlSubredditRule::per_user_min
                         ? treat_active >= 10
                         : (treat_contributors >= 10 && treat_posts >= 10);
    if (!qualifies) continue;
    double pct = static_cast<double>(treat_contributors) / static_cast<double>(contributors.size());
    ranked.push_back(Ranked{pct, store.subreddit_name(sid)});
  }
  if (ranked.empty()) throw DataError("no qualifying control subreddits for Control A");
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.pct != b.pct) return a.pct > b.pct;
    return a.name < b.name;
  });
  if (static_cast<int>(ranked.size()) > max_count) ranked.resize(static_cast<std::size_t>(max_count));
  std::vector<std::string> out;
  out.reserve(ranked.size());
  for (const auto& r : ranked) out.push_back(r.name);
  return out;
}

namespace {

/// Users with >= min_activity pre-window records in `sub`; merges into
/// `best_count` keeping each user's largest qualifying-context count.
void collect_active_users(const EventStore& store, std::string_view sub, const EventSpec& spec,
                          std::map<std::uint32_t, int>& best_count) {
  auto sid = store.subreddit_id(sub);
  if (!sid) return;
  const auto& events = store.subreddit_events(*sid);
  auto lo = std::lower_bound(events.begin(), events.end(), spec.pre_start(),
                             [](const EventStore::SubEvent& e, std::int64_t t) { return e.ts < t; });
  std::map<std::uint32_t, int> counts;
  for (auto it = lo; it != events.end() && it->ts < spec.event_time; ++it) ++counts[it->author];
  for (const auto& [aid, n] : counts) {
    if (n < spec.min_activity) continue;
    auto [pos, inserted] = best_count.emplace(aid, n);
    if (!inserted && n > pos->second) pos->second = n;
  }
}

std::map<std::string, int> drop_treatment_posters(const EventStore& store,
                                                  const std::map<std::uint32_t, int>& users,
                                                  const EventSpec& spec) {
  std::set<std::uint32_t> ever_in_treatment;
  auto tsid = store.subreddit_id(spec.treatment_subreddit);
  if (tsid) {
    for (const auto& e : store.subreddit_events(*tsid)) ever_in_treatment.insert(e.author);
  }
  std::map<std::string, int> out;
  for (const auto& [aid, n] : users) {
    if (ever_in_treatment.count(aid)) continue;
    out[store.author_name(aid)] = n;
  }
  return out;
}

}  // namespace

std::map<std::string, int> candidate_control_users_a(const EventStore& store,
                                                     const std::vector<std::string>& control_subs,
                                                     const EventSpec& spec) {
  std::map<std::uint32_t, int> best;
  for (const auto& sub : control_subs) collect_active_users(store, sub, spec, best);
  return drop_treatment_posters(store, best, spec);
}

std::map<std::string, int> candidate_control_users_b(const EventStore& store, const EventSpec& spec,
                                                     std::string_view hub) {
  std::map<std::uint32_t, int> best;
  collect_active_users(store, hub, spec, best);
  return drop_treatment_posters(store, best, spec);
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

Eigen::Matrix3d candidate_covariance(const std::vector<LabelledVector>& candidates) {
  const std::size_t n = candidates.size();
  if (n < 2) return Eigen::Matrix3d::Identity();
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& [_, v] : candidates) mean += v;
  mean /= static_cast<double>(n);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& [_, v] : candidates) {
    Eigen::Vector3d d = v - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(n - 1);
  double eps = 1e-8 * cov.trace() / 3.0;
  cov += eps * Eigen::Matrix3d::Identity();
  return cov;
}

MatchResult greedy_match(const std::vector<LabelledVector>& treatment,
                         const std::vector<LabelledVector>& candidates,
                         const Eigen::Matrix3d& metric) {
  struct Pair {
    double d;
    std::size_t t, c;
  };
  // All pairwise distances, ordered by (distance, treatment id, candidate id).
  std::vector<Pair> pairs;
  pairs.reserve(treatment.size() * candidates.size());
  for (std::size_t t = 0; t < treatment.size(); ++t) {
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      Eigen::Vector3d d = treatment[t].second - candidates[c].second;
      double dist = std::sqrt(std::max(0.0, d.dot(metric * d)));
      pairs.push_back(Pair{dist, t, c});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.d != b.d) return a.d < b.d;
    if (treatment[a.t].first != treatment[b.t].first)
      return treatment[a.t].first < treatment[b.t].first;
    return candidates[a.c].first < candidates[b.c].first;
  });
  std::vector<bool> t_used(treatment.size(), false), c_used(candidates.size(), false);
  MatchResult result;
  std::size_t matched = 0;
  const std::size_t cap = std::min(treatment.size(), candidates.size());
  for (const Pair& p : pairs) {
    if (matched == cap) break;
    if (t_used[p.t] || c_used[p.c]) continue;
    t_used[p.t] = true;
    c_used[p.c] = true;
    ++matched;
    result.pairs.push_back(MatchedPair{treatment[p.t].first, candidates[p.c].first, p.d});
  }
  for (std::size_t t = 0; t < treatment.size(); ++t)
    if (!t_used[t]) result.unmatched_treatment.push_back(treatment[t].first);
  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const MatchedPair& a, const MatchedPair& b) {
              return a.treatment_user < b.treatment_user;
            });
  std::sort(result.unmatched_treatment.begin(), result.unmatched_treatment.end());
  return result;
}

MatchResult mahalanobis_match(const std::vector<LabelledVector>& treatment,
                              const std::vector<LabelledVector>& candidates) {
  if (candidates.empty()) throw DataError("mahalanobis_match requires at least one candidate");
  Eigen::Matrix3d cov = candidate_covariance(candidates);
  Eigen::LDLT<Eigen::Matrix3d> ldlt(cov);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw DataError("candidate covariance is not invertible after regularization");
  Eigen::Matrix3d inv = ldlt.solve(Eigen::Matrix3d::Identity());
  if (!inv.allFinite())
    throw DataError("candidate covariance is not invertible after regularization");
  return greedy_match(treatment, candidates, inv);
}

// ---------------------------------------------------------------------------
// Cohort assembly and serialization
// ---------------------------------------------------------------------------

std::vector<std::string> Cohort::matched_controls_a() const {
  std::vector<std::string> out;
  out.reserve(control_a.pairs.size());
  for (const auto& p : control_a.pairs) out.push_back(p.control_user);
  return out;
}

std::vector<std::string> Cohort::matched_controls_b() const {
  std::vector<std::string> out;
  out.reserve(control_b.pairs.size());
  for (const auto& p : control_b.pairs) out.push_back(p.control_user);
  return out;
}

namespace {

json match_to_json(const MatchResult& m) {
  json pairs = json::array();
  for (const auto& p : m.pairs)
    pairs.push_back({{"treatment_user", p.treatment_user},
                     {"control_user", p.control_user},
                     {"distance", p.distance}});
  return json{{"pairs", pairs}, {"unmatched_treatment", m.unmatched_treatment}};
}

MatchResult match_from_json(const json& j) {
  MatchResult m;
  for (const auto& p : j.at("pairs"))
    m.pairs.push_back(MatchedPair{p.at("treatment_user"), p.at("control_user"), p.at("distance")});
  m.unmatched_treatment = j.at("unmatched_treatment").get<std::vector<std::string>>();
  return m;
}

}  // namespace

std::string Cohort::to_json(const Provenance& prov) const {
  json j;
  j["provenance"] = {{"command", prov.command_line}, {"store_checksum", prov.store_checksum}};
  if (prov.seed) j["provenance"]["seed"] = *prov.seed;
  j["event"] = {{"treatment_subreddit", spec.treatment_subreddit},
                {"event_time", spec.event_time},
                {"min_activity", spec.min_activity},
                {"pre_window_s", spec.pre_window_s},
                {"post_window_s", spec.post_window_s}};
  j["hub_subreddit"] = hub_subreddit;
  j["treatment_users"] = treatment_users;
  j["treatment_pre_counts"] = treatment_pre_counts;
  j["control_subreddits"] = control_subreddits;
  j["control_a"] = match_to_json(control_a);
  j["control_b"] = match_to_json(control_b);
  j["control_a_counts"] = control_a_counts;
  j["control_b_counts"] = control_b_counts;
  j["unmatched_pool_a"] = unmatched_pool_a;
  j["store_path"] = store_path;
  j["store_checksum"] = store_checksum;
  return j.dump(2);
}

Cohort Cohort::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read cohort file: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("corrupt cohort file: " + path.string());
  Cohort c;
  const json& e = j.at("event");
  c.spec.treatment_subreddit = e.at("treatment_subreddit");
  c.spec.event_time = e.at("event_time");
  c.spec.min_activity = e.at("min_activity");
  c.spec.pre_window_s = e.at("pre_window_s");
  c.spec.post_window_s = e.at("post_window_s");
  c.hub_subreddit = j.at("hub_subreddit");
  c.treatment_users = j.at("treatment_users").get<std::vector<std::string>>();
  c.treatment_pre_counts = j.at("treatment_pre_counts").get<std::map<std::string, int>>();
  c.control_subreddits = j.at("control_subreddits").get<std::vector<std::string>>();
  c.control_a = match_from_json(j.at("control_a"));
  c.control_b = match_from_json(j.at("control_b"));
  c.control_a_counts = j.at("control_a_counts").get<std::map<std::string, int>>();
  c.control_b_counts = j.at("control_b_counts").get<std::map<std::string, int>>();
  c.unmatched_pool_a = j.at("unmatched_pool_a").get<std::vector<std::string>>();
  c.store_path = j.at("store_path");
  c.store_checksum = j.at("store_checksum");
  return c;
}

void Cohort::save(const std::filesystem::path& path, const Provenance& prov) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write cohort file: " + path.string());
  out << to_json(prov) << '\n';
}

Cohort build_cohort(const EventStore& store, const EventSpec& spec, const CohortOptions& options) {
  spec.validate();
  if (store.record_count() == 0) throw DataError("store is empty");
  if (spec.event_time < store.min_ts() || spec.event_time > store.max_ts())
    throw DataError("event time " + std::to_string(spec.event_time) + " outside store range [" +
                    std::to_string(store.min_ts()) + ", " + std::to_string(store.max_ts()) + "]");

  Cohort c;
  c.spec = spec;
  c.hub_subreddit = options.hub_subreddit;
  c.store_path = store.root().string();
  c.store_checksum = store.checksum();

  c.treatment_users = treatment_users(store, spec);
  for (const auto& u : c.treatment_users)
    c.treatment_pre_counts[u] = static_cast<int>(
        store.user_activity_count(u, spec.pre_start(), spec.event_time, spec.treatment_subreddit));

  std::vector<LabelledVector> treat_vectors;
  treat_vectors.reserve(c.treatment_users.size());
  for (const auto& u : c.treatment_users)
    treat_vectors.emplace_back(u, covariates(store, u, spec, options.karma).as_vector());

  auto match_pool = [&](const std::map<std::string, int>& candidates) {
    std::vector<LabelledVector> vecs;
    vecs.reserve(candidates.size());
    for (const auto& [u, _] : candidates)
      vecs.emplace_back(u, covariates(store, u, spec, options.karma).as_vector());
    return mahalanobis_match(treat_vectors, vecs);
  };

  c.control_subreddits = control_subreddits_a(store, c.treatment_users, spec, options.rule,
                                              options.max_control_subreddits);
  auto cands_a = candidate_control_users_a(store, c.control_subreddits, spec);
  if (cands_a.empty()) throw DataError("no Control-A candidate users");
  c.control_a = match_pool(cands_a);
  for (const auto& p : c.control_a.pairs) c.control_a_counts[p.control_user] = cands_a.at(p.control_user);
  {
    std::set<std::string> matched;
    for (const auto& p : c.control_a.pairs) matched.insert(p.control_user);
    for (const auto& [u, _] : cands_a)
      if (!matched.count(u)) c.unmatched_pool_a.push_back(u);
  }

  auto cands_b = candidate_control_users_b(store, spec, options.hub_subreddit);
  if (cands_b.empty()) throw DataError("no Control-B candidate users");
  c.control_b = match_pool(cands_b);
  for (const auto& p : c.control_b.pairs) c.control_b_counts[p.control_user] = cands_b.at(p.control_user);

  return c;
}

}  // namespace shockkit::cohort
