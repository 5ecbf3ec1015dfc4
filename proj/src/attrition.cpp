#include "shockkit/attrition.hpp"

#include <algorithm>
#include <cmath>

namespace shockkit::attrition {

bool is_inactive(const EventStore& store, std::string_view user, std::int64_t event_time,
                 int grace_weeks, std::int64_t horizon_s) {
  std::int64_t lo = event_time + static_cast<std::int64_t>(grace_weeks) * 7 * kSecondsPerDay;
  std::int64_t hi = event_time + horizon_s;
  if (lo >= hi) return true;
  auto aid = store.author_id(user);
  if (!aid) return true;
  // Interval is (lo, hi]: activity exactly at the grace boundary is residual.
  return !store.any_activity(*aid, lo + 1, hi + 1);
}

int activity_bracket(int count, const std::vector<int>& edges) {
  if (edges.empty() || count < edges.front()) return -1;
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (count < edges[i]) return static_cast<int>(i) - 1;
  return static_cast<int>(edges.size()) - 1;
}

std::string bracket_label(int bracket, const std::vector<int>& edges) {
  if (bracket < 0 || bracket >= static_cast<int>(edges.size())) return "none";
  if (bracket + 1 == static_cast<int>(edges.size()))
    return std::to_string(edges.back()) + "+";
  return std::to_string(edges[static_cast<std::size_t>(bracket)]) + "-" +
         std::to_string(edges[static_cast<std::size_t>(bracket) + 1]);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

PropTest two_proportion_test(std::int64_t k1, std::int64_t n1, std::int64_t k2, std::int64_t n2) {
  if (n1 < 1 || n2 < 1) throw DataError("two_proportion_test requires n1, n2 >= 1");
  if (k1 < 0 || k1 > n1 || k2 < 0 || k2 > n2)
    throw DataError("two_proportion_test requires 0 <= k <= n");
  PropTest r;
  double pool = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
  if (pool <= 0.0 || pool >= 1.0) {
    r.z = 0.0;
    r.p_two_sided = 1.0;
    return r;
  }
  double p1 = static_cast<double>(k1) / static_cast<double>(n1);
  double p2 = static_cast<double>(k2) / static_cast<double>(n2);
  double se = std::sqrt(pool * (1.0 - pool) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  r.z = (p1 - p2) / se;
  r.p_two_sided = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  return r;
}

namespace {

struct GroupSpec {
  std::string name;
  const std::vector<std::string>* users;
  const std::map<std::string, int>* bracket_counts;
};

}  // namespace

AttritionTable attrition_report(const EventStore& store, const cohort::Cohort& cohort,
                                const std::vector<int>& graces, const std::vector<int>& edges) {
  AttritionTable table;
  table.edges = edges;
  table.graces = graces;

  auto controls_a = cohort.matched_controls_a();
  auto controls_b = cohort.matched_controls_b();
  std::vector<GroupSpec> groups = {
      {"treatment", &cohort.treatment_users, &cohort.treatment_pre_counts},
      {"control_a", &controls_a, &cohort.control_a_counts},
      {"control_b", &controls_b, &cohort.control_b_counts},
  };

  const int nb = static_cast<int>(edges.size());
  // inactive[group][bracket][grace], size[group][bracket]
  std::vector<std::vector<std::vector<std::int64_t>>> inactive(
      groups.size(), std::vector<std::vector<std::int64_t>>(
                         static_cast<std::size_t>(nb), std::vector<std::int64_t>(graces.size(), 0)));
  std::vector<std::vector<std::int64_t>> size(groups.size(),
                                              std::vector<std::int64_t>(static_cast<std::size_t>(nb), 0));

  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& user : *groups[g].users) {
      auto it = groups[g].bracket_counts->find(user);
      int count = it == groups[g].bracket_counts->end() ? 0 : it->second;
      int b = activity_bracket(count, edges);
      if (b < 0) continue;
      ++size[g][static_cast<std::size_t>(b)];
      for (std::size_t gi = 0; gi < graces.size(); ++gi) {
        if (is_inactive(store, user, cohort.spec.event_time, graces[gi], cohort.spec.post_window_s))
          ++inactive[g][static_cast<std::size_t>(b)][gi];
      }
    }
  }

  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int b = 0; b < nb; ++b) {
      for (std::size_t gi = 0; gi < graces.size(); ++gi) {
        AttritionCell cell;
        cell.group = groups[g].name;
        cell.bracket = b;
        cell.grace_weeks = graces[gi];
        cell.inactive = inactive[g][static_cast<std::size_t>(b)][gi];
        cell.size = size[g][static_cast<std::size_t>(b)];
        cell.rate = cell.size > 0 ? static_cast<double>(cell.inactive) / static_cast<double>(cell.size)
                                  : 0.0;
        table.cells.push_back(cell);
      }
    }
  }

  for (std::size_t ctrl = 1; ctrl < groups.size(); ++ctrl) {
    for (int b = 0; b < nb; ++b) {
      for (std::size_t gi = 0; gi < graces.size(); ++gi) {
        std::int64_t nt = size[0][static_cast<std::size_t>(b)];
        std::int64_t nc = size[ctrl][static_cast<std::size_t>(b)];
        if (nt < 1 || nc < 1) continue;
        std::int64_t kt = inactive[0][static_cast<std::size_t>(b)][gi];
        std::int64_t kc = inactive[ctrl][static_cast<std::size_t>(b)][gi];
        PropTest t = two_proportion_test(kt, nt, kc, nc);
        AttritionComparison cmp;
        cmp.bracket = b;
        cmp.grace_weeks = graces[gi];
        cmp.control = groups[ctrl].name;
        cmp.z = t.z;
        cmp.p_two_sided = t.p_two_sided;
        double rate_t = static_cast<double>(kt) / static_cast<double>(nt);
        double rate_c = static_cast<double>(kc) / static_cast<double>(nc);
        cmp.sig_one_tailed = rate_t > rate_c && t.p_two_sided / 2.0 < 0.05;
        table.tests.push_back(cmp);
      }
    }
  }
  return table;
}

void write_attrition_csv(const AttritionTable& table, const std::filesystem::path& path,
                         const Provenance& prov) {
  CsvWriter csv(path, prov.comment_lines(),
                {"group", "bracket", "grace_weeks", "inactive", "size", "rate", "control", "z",
                 "p_two_sided", "sig_one_tailed"});
  for (const auto& c : table.cells) {
    csv.row({c.group, bracket_label(c.bracket, table.edges), std::to_string(c.grace_weeks),
             std::to_string(c.inactive), std::to_string(c.size), format_double(c.rate), "", "", "",
             ""});
  }
  for (const auto& t : table.tests) {
    csv.row({"treatment_vs_" + t.control, bracket_label(t.bracket, table.edges),
             std::to_string(t.grace_weeks), "", "", "", t.control, format_double(t.z),
             format_double(t.p_two_sided), t.sig_one_tailed ? "1" : "0"});
  }
}

}  // namespace shockkit::attrition
