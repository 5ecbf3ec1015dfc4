#include "shockkit/synthlab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace shockkit::synthlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTagTreatment = 11;
constexpr std::uint64_t kTagControl = 12;

std::string padded(std::string_view prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05d", std::string(prefix).c_str(), i);
  return buf;
}

struct UserPlan {
  std::string name;
  std::uint64_t rng_seed = 0;
  std::vector<std::pair<std::string, double>> rates;  // subreddit -> weekly rate
  std::optional<int> departure_week;
  bool did_shifted = false;
  std::vector<const ChangepointInjection*> injections;
};

}  // namespace

SynthSpec SynthSpec::from_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read synth spec: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("synth spec is not a JSON object");
  SynthSpec spec;
  std::vector<std::string> known = {"seed",
                                    "event_time",
                                    "weeks_before",
                                    "weeks_after",
                                    "treatment_subreddit",
                                    "hub_subreddit",
                                    "control_subreddit_count",
                                    "background_subreddit_count",
                                    "treatment_users",
                                    "control_users",
                                    "rates",
                                    "ban_treatment_subreddit",
                                    "attrition",
                                    "leaver_signal_rate",
                                    "did_shift",
                                    "changepoints",
                                    "comment_fraction"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw DataError("unknown key in synth spec: " + it.key());
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
  };
  get("seed", spec.seed);
  get("event_time", spec.event_time);
  get("weeks_before", spec.weeks_before);
  get("weeks_after", spec.weeks_after);
  get("treatment_subreddit", spec.treatment_subreddit);
  get("hub_subreddit", spec.hub_subreddit);
  get("control_subreddit_count", spec.control_subreddit_count);
  get("background_subreddit_count", spec.background_subreddit_count);
  get("treatment_users", spec.treatment_users);
  get("control_users", spec.control_users);
  get("ban_treatment_subreddit", spec.ban_treatment_subreddit);
  get("comment_fraction", spec.comment_fraction);
  if (j.contains("rates")) {
    const json& r = j.at("rates");
    for (auto it = r.begin(); it != r.end(); ++it) {
      const std::string& k = it.key();
      double v = it.value().get<double>();
      if (k == "treatment_in_treatment") spec.rate_treatment_in_treatment = v;
      else if (k == "treatment_in_control") spec.rate_treatment_in_control = v;
      else if (k == "treatment_background") spec.rate_treatment_background = v;
      else if (k == "treatment_in_hub") spec.rate_treatment_in_hub = v;
      else if (k == "control_in_control") spec.rate_control_in_control = v;
      else if (k == "control_in_hub") spec.rate_control_in_hub = v;
      else if (k == "control_background") spec.rate_control_background = v;
      else throw DataError("unknown rate key in synth spec: " + k);
    }
  }
  if (j.contains("attrition")) {
    const json& a = j.at("attrition");
    if (a.contains("treatment_fraction")) spec.attrition_fraction_treatment = a.at("treatment_fraction");
    if (a.contains("control_fraction")) spec.attrition_fraction_control = a.at("control_fraction");
    if (a.contains("min_departure_week")) spec.attrition_min_departure_week = a.at("min_departure_week");
    if (a.contains("max_departure_week")) spec.attrition_max_departure_week = a.at("max_departure_week");
  }
  if (j.contains("leaver_signal_rate")) spec.leaver_signal_rate = j.at("leaver_signal_rate").get<double>();
  if (j.contains("did_shift")) spec.did_shift = j.at("did_shift").get<double>();
  if (j.contains("changepoints")) {
    for (const json& c : j.at("changepoints")) {
      ChangepointInjection inj;
      if (c.contains("week")) inj.week = c.at("week");
      if (c.contains("rate_multiplier")) inj.rate_multiplier = c.at("rate_multiplier");
      if (c.contains("affected_fraction")) inj.affected_fraction = c.at("affected_fraction");
      if (c.contains("group")) inj.group = c.at("group");
      spec.changepoints.push_back(inj);
    }
  }
  if (spec.treatment_users < 0 || spec.control_users < 0 || spec.weeks_before < 1 ||
      spec.weeks_after < 1 || spec.control_subreddit_count < 1)
    throw DataError("synth spec out of range");
  return spec;
}

std::string SynthSpec::to_json() const {
  json j;
  j["seed"] = seed;
  j["event_time"] = event_time;
  j["weeks_before"] = weeks_before;
  j["weeks_after"] = weeks_after;
  j["treatment_subreddit"] = treatment_subreddit;
  j["hub_subreddit"] = hub_subreddit;
  j["control_subreddit_count"] = control_subreddit_count;
  j["background_subreddit_count"] = background_subreddit_count;
  j["treatment_users"] = treatment_users;
  j["control_users"] = control_users;
  j["rates"] = {{"treatment_in_treatment", rate_treatment_in_treatment},
                {"treatment_in_control", rate_treatment_in_control},
                {"treatment_background", rate_treatment_background},
                {"treatment_in_hub", rate_treatment_in_hub},
                {"control_in_control", rate_control_in_control},
                {"control_in_hub", rate_control_in_hub},
                {"control_background", rate_control_background}};
  j["ban_treatment_subreddit"] = ban_treatment_subreddit;
  j["attrition"] = {{"treatment_fraction", attrition_fraction_treatment},
                    {"control_fraction", attrition_fraction_control},
                    {"min_departure_week", attrition_min_departure_week},
                    {"max_departure_week", attrition_max_departure_week}};
  j["leaver_signal_rate"] = leaver_signal_rate;
  j["did_shift"] = did_shift;
  json cps = json::array();
  for (const auto& c : changepoints)
    cps.push_back({{"week", c.week},
                   {"rate_multiplier", c.rate_multiplier},
                   {"affected_fraction", c.affected_fraction},
                   {"group", c.group}});
  j["changepoints"] = cps;
  j["comment_fraction"] = comment_fraction;
  return j.dump(2);
}

std::string GroundTruth::to_json() const {
  json j;
  j["treatment_users"] = treatment_users;
  j["qualifying_treatment"] = qualifying_treatment;
  j["control_users"] = control_users;
  j["leavers"] = leavers;
  j["did_shifted"] = did_shifted;
  j["changepoint_users"] = changepoint_users;
  j["record_count"] = record_count;
  j["subreddit_counts"] = subreddit_counts;
  return j.dump(2);
}

SynthOutput generate(const SynthSpec& spec, const fs::path& out_dir) {
  fs::create_directories(out_dir);

  std::vector<std::string> control_subs, background_subs;
  for (int i = 0; i < spec.control_subreddit_count; ++i) control_subs.push_back(padded("ctrl", i));
  for (int i = 0; i < spec.background_subreddit_count; ++i) background_subs.push_back(padded("bg", i));

  auto plan_user = [&](int idx, bool treatment) {
    UserPlan plan;
    plan.name = padded(treatment ? "tuser" : "cuser", idx);
    plan.rng_seed = derive_seed(spec.seed, treatment ? kTagTreatment : kTagControl,
                                static_cast<std::uint64_t>(idx));
    Rng rng(derive_seed(plan.rng_seed, 99));
    if (treatment) {
      plan.rates.emplace_back(spec.treatment_subreddit, spec.rate_treatment_in_treatment);
      plan.rates.emplace_back(control_subs[idx % control_subs.size()], spec.rate_treatment_in_control);
      plan.rates.emplace_back(control_subs[(idx + 1) % control_subs.size()],
                              spec.rate_treatment_in_control);
      if (spec.rate_treatment_in_hub > 0)
        plan.rates.emplace_back(spec.hub_subreddit, spec.rate_treatment_in_hub);
    } else {
      // One third of the pool is hub-only, one third control-subreddit-only,
      // the rest both, so Control A and Control B draw on distinct users.
      bool hub_only = idx % 3 == 0;
      bool ctrl_only = idx % 3 == 1;
      if (!hub_only) {
        plan.rates.emplace_back(control_subs[idx % control_subs.size()], spec.rate_control_in_control);
        plan.rates.emplace_back(control_subs[(idx + 2) % control_subs.size()],
                                spec.rate_control_in_control);
      }
      if (!ctrl_only) plan.rates.emplace_back(spec.hub_subreddit, spec.rate_control_in_hub);
    }
    double bg_rate = treatment ? spec.rate_treatment_background : spec.rate_control_background;
    if (!background_subs.empty() && bg_rate > 0) {
      double each = bg_rate / static_cast<double>(background_subs.size());
      for (const auto& b : background_subs) plan.rates.emplace_back(b, each);
    }
    double attr = treatment ? spec.attrition_fraction_treatment : spec.attrition_fraction_control;
    if (attr > 0 && rng.uniform01() < attr) {
      int span = spec.attrition_max_departure_week - spec.attrition_min_departure_week + 1;
      plan.departure_week =
          spec.attrition_min_departure_week + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
      if (spec.leaver_signal_rate > 0)
        plan.rates.emplace_back("signal000", spec.leaver_signal_rate);
    }
    if (treatment && spec.did_shift != 0.0) plan.did_shifted = true;
    for (const auto& inj : spec.changepoints) {
      bool applies = (inj.group == "treatment") == treatment;
      if (applies && inj.affected_fraction > 0 && rng.uniform01() < inj.affected_fraction)
        plan.injections.push_back(&inj);
    }
    return plan;
  };

  std::vector<UserPlan> plans;
  for (int i = 0; i < spec.treatment_users; ++i) plans.push_back(plan_user(i, true));
  for (int i = 0; i < spec.control_users; ++i) plans.push_back(plan_user(i, false));

  const int week_lo = -spec.weeks_before;
  const int week_hi = spec.weeks_after - 1;
  const std::int64_t pre_lo = spec.event_time - 365 * kSecondsPerDay;

  GroundTruth truth;
  std::vector<std::string> blocks(plans.size());
  std::vector<std::uint64_t> counts(plans.size(), 0);
  std::vector<int> pre_treatment_counts(plans.size(), 0);
  std::vector<std::map<std::string, std::uint64_t>> sub_counts(plans.size());

  parallel_for(plans.size(), default_thread_count(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t u = lo; u < hi; ++u) {
      const UserPlan& plan = plans[u];
      Rng rng(plan.rng_seed);
      std::string block;
      std::vector<std::string> lines;
      for (std::size_t d = 0; d < plan.rates.size(); ++d) {
        const auto& [sub, base] = plan.rates[d];
        bool is_treatment_sub = sub == spec.treatment_subreddit;
        bool is_background = std::find(background_subs.begin(), background_subs.end(), sub) !=
                             background_subs.end();
        for (int w = week_lo; w <= week_hi; ++w) {
          double rate = base;
          if (plan.departure_week && w >= *plan.departure_week) rate = 0.0;
          if (is_treatment_sub && spec.ban_treatment_subreddit && w >= 0) rate = 0.0;
          for (const auto* inj : plan.injections)
            if (w >= inj->week) rate *= inj->rate_multiplier;
          if (plan.did_shifted && is_background && w >= 0 && !background_subs.empty()) {
            rate += spec.did_shift / static_cast<double>(background_subs.size());
            rate = std::max(0.0, rate);
          }
          int n = rng.poisson(rate);
          if (n == 0) continue;
          std::vector<std::int64_t> ts;
          ts.reserve(static_cast<std::size_t>(n));
          std::int64_t start = spec.event_time + static_cast<std::int64_t>(w) * kSecondsPerWeek;
          for (int k = 0; k < n; ++k)
            ts.push_back(start + static_cast<std::int64_t>(rng.below(kSecondsPerWeek)));
          std::sort(ts.begin(), ts.end());
          for (int k = 0; k < n; ++k) {
            ActivityRecord rec;
            rec.author = plan.name;
            rec.subreddit = sub;
            rec.timestamp = ts[static_cast<std::size_t>(k)];
            rec.kind = rng.uniform01() < spec.comment_fraction ? Kind::comment : Kind::post;
            rec.record_id = plan.name + "-" + sub + "-w" + std::to_string(w) + "-" + std::to_string(k);
            lines.push_back(record_to_json_line(rec));
            ++counts[u];
            ++sub_counts[u][sub];
            if (is_treatment_sub && rec.timestamp >= pre_lo && rec.timestamp < spec.event_time)
              ++pre_treatment_counts[u];
          }
        }
      }
      std::sort(lines.begin(), lines.end());
      for (const auto& l : lines) {
        block += l;
        block += '\n';
      }
      blocks[u] = std::move(block);
    }
  });

  fs::path records_path = out_dir / "records.ndjson";
  {
    std::ofstream out(records_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + records_path.string());
    for (const auto& b : blocks) out << b;
  }

  for (std::size_t u = 0; u < plans.size(); ++u) {
    const UserPlan& plan = plans[u];
    bool treatment = u < static_cast<std::size_t>(spec.treatment_users);
    (treatment ? truth.treatment_users : truth.control_users).push_back(plan.name);
    if (treatment && pre_treatment_counts[u] >= 10) truth.qualifying_treatment.push_back(plan.name);
    if (plan.departure_week) truth.leavers[plan.name] = *plan.departure_week;
    if (plan.did_shifted) truth.did_shifted.push_back(plan.name);
    if (!plan.injections.empty()) truth.changepoint_users.push_back(plan.name);
    truth.record_count += counts[u];
    for (const auto& [sub, c] : sub_counts[u]) truth.subreddit_counts[sub] += c;
  }

  fs::path truth_path = out_dir / "ground_truth.json";
  {
    std::ofstream out(truth_path, std::ios::binary);
    out << truth.to_json() << '\n';
  }
  return SynthOutput{std::move(truth), records_path, truth_path};
}

Eigen::MatrixXi poisson_week_matrix(std::uint64_t seed, int week_lo, int week_hi, int dims,
                                    const std::function<double(int, int)>& rate_of) {
  int weeks = week_hi - week_lo + 1;
  Eigen::MatrixXi m(weeks, dims);
  Rng rng(seed);
  for (int w = 0; w < weeks; ++w)
    for (int d = 0; d < dims; ++d) m(w, d) = rng.poisson(rate_of(week_lo + w, d));
  return m;
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

namespace {

// Gamma-Poisson marginal likelihood of one contiguous block, independent dims.
double log_block_marginal(const Eigen::MatrixXi& series, int first, int last, double alpha0,
                          double beta0) {
  double total = 0.0;
  const int k = last - first + 1;
  for (int d = 0; d < series.cols(); ++d) {
    long s = 0;
    for (int i = first; i <= last; ++i) {
      s += series(i, d);
      total -= std::lgamma(static_cast<double>(series(i, d)) + 1.0);
    }
    total += std::lgamma(alpha0 + static_cast<double>(s)) - std::lgamma(alpha0) +
             alpha0 * std::log(beta0) -
             (alpha0 + static_cast<double>(s)) * std::log(beta0 + static_cast<double>(k));
  }
  return total;
}

}  // namespace

Eigen::VectorXd oracle_changepoint_exact(const Eigen::MatrixXi& series, double alpha0, double beta0,
                                         double hazard) {
  const int T = static_cast<int>(series.rows());
  if (T > 12) throw DataError("oracle_changepoint_exact requires T <= 12");
  Eigen::VectorXd out(T);
  if (T == 0) return out;
  const double lh = std::log(hazard);
  const double l1h = std::log1p(-hazard);
  for (int t = 1; t <= T; ++t) {
    if (t == 1) {
      // Both states of the leading boundary produce the same single block;
      // the posterior equals the prior.
      out(0) = hazard;
      continue;
    }
    // Boundaries before observations 2..t (1-based); observation 1 always
    // starts a block. 2^(t-1) segmentations of the prefix.
    const int bits = t - 1;
    std::vector<double> logv;
    std::vector<bool> last_is_boundary;
    logv.reserve(std::size_t{1} << bits);
    for (std::uint32_t mask = 0; mask < (std::uint32_t{1} << bits); ++mask) {
      double lw = 0.0;
      double ll = 0.0;
      int block_start = 0;
      for (int pos = 2; pos <= t; ++pos) {
        bool boundary = (mask >> (pos - 2)) & 1u;
        lw += boundary ? lh : l1h;
        if (boundary) {
          ll += log_block_marginal(series, block_start, pos - 2, alpha0, beta0);
          block_start = pos - 1;
        }
      }
      ll += log_block_marginal(series, block_start, t - 1, alpha0, beta0);
      logv.push_back(lw + ll);
      last_is_boundary.push_back((mask >> (bits - 1)) & 1u);
    }
    double m = *std::max_element(logv.begin(), logv.end());
    double den = 0.0, num = 0.0;
    for (std::size_t i = 0; i < logv.size(); ++i) {
      double v = std::exp(logv[i] - m);
      den += v;
      if (last_is_boundary[i]) num += v;
    }
    out(t - 1) = num / den;
  }
  return out;
}

std::vector<double> oracle_permutation_exact(
    std::size_t n, std::size_t k, const std::function<double(const std::vector<std::size_t>&)>& statistic) {
  if (k > n) throw DataError("oracle_permutation_exact: k > n");
  double combos = 1.0;
  for (std::size_t i = 0; i < k; ++i) combos = combos * static_cast<double>(n - i) / static_cast<double>(i + 1);
  if (combos > 1e6) throw DataError("oracle_permutation_exact: C(n,k) too large");
  std::vector<double> out;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    out.push_back(statistic(idx));
    // next combination in lexicographic order
    std::size_t i = k;
    while (i > 0) {
      --i;
      if (idx[i] != i + n - k) break;
      if (i == 0 && idx[0] == n - k) return out;
    }
    if (idx[i] == i + n - k) return out;
    ++idx[i];
    for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

namespace {

struct RawFields {
  std::string author;
  std::string subreddit;
  std::int64_t ts = -1;
  bool ok = false;
};

RawFields raw_fields(const std::string& line) {
  RawFields f;
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return f;
  if (!j.contains("author") || !j.contains("subreddit") || !j.contains("created_utc") ||
      !j.contains("id"))
    return f;
  if (!j["author"].is_string() || !j["subreddit"].is_string()) return f;
  f.author = j["author"].get<std::string>();
  f.subreddit = j["subreddit"].get<std::string>();
  if (j["created_utc"].is_number_integer()) {
    f.ts = j["created_utc"].get<std::int64_t>();
  } else if (j["created_utc"].is_string()) {
    try {
      f.ts = std::stoll(j["created_utc"].get<std::string>());
    } catch (...) {
      return f;
    }
  } else {
    return f;
  }
  f.ok = f.ts >= 0 && !f.author.empty() && !f.subreddit.empty();
  return f;
}

}  // namespace

std::int64_t oracle_recount(const std::vector<std::string>& ndjson_lines, std::string_view user,
                            std::int64_t t0, std::int64_t t1,
                            std::optional<std::string_view> subreddit) {
  std::int64_t n = 0;
  for (const auto& line : ndjson_lines) {
    RawFields f = raw_fields(line);
    if (!f.ok || f.author != user) continue;
    if (f.ts < t0 || f.ts >= t1) continue;
    if (subreddit && f.subreddit != *subreddit) continue;
    ++n;
  }
  return n;
}

std::map<int, std::int64_t> oracle_weekly_recount(const std::vector<std::string>& ndjson_lines,
                                                  std::string_view user, std::int64_t anchor,
                                                  std::optional<std::string_view> subreddit) {
  std::map<int, std::int64_t> weeks;
  for (const auto& line : ndjson_lines) {
    RawFields f = raw_fields(line);
    if (!f.ok || f.author != user) continue;
    if (subreddit && f.subreddit != *subreddit) continue;
    std::int64_t d = f.ts - anchor;
    std::int64_t w = d / 604800;
    if (d < 0 && d % 604800 != 0) --w;
    ++weeks[static_cast<int>(w)];
  }
  return weeks;
}

}  // namespace shockkit::synthlab
