#include <doctest.h>

#include <fstream>
#include <set>

#include "shockkit/event_store.hpp"
#include "shockkit/synthlab.hpp"
#include "test_support.hpp"

using namespace shockkit;
using namespace shockkit::synthlab;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l))
    if (!l.empty()) lines.push_back(l);
  return lines;
}

}  // namespace

TEST_CASE("generator: zero rates produce an empty corpus") {
  testsupport::TempDir dir("synth-zero");
  SynthSpec spec;
  spec.treatment_users = 5;
  spec.control_users = 5;
  spec.rate_treatment_in_treatment = 0;
  spec.rate_treatment_in_control = 0;
  spec.rate_treatment_background = 0;
  spec.rate_treatment_in_hub = 0;
  spec.rate_control_in_control = 0;
  spec.rate_control_in_hub = 0;
  spec.rate_control_background = 0;
  auto out = generate(spec, dir / "corpus");
  CHECK(out.truth.record_count == 0);
  CHECK(read_lines(out.records_path).empty());
}

TEST_CASE("generator: attrition fraction 1.0 marks every user a leaver") {
  testsupport::TempDir dir("synth-leavers");
  SynthSpec spec;
  spec.treatment_users = 20;
  spec.control_users = 0;
  spec.attrition_fraction_treatment = 1.0;
  auto out = generate(spec, dir / "corpus");
  CHECK(out.truth.leavers.size() == 20);
  for (const auto& [user, week] : out.truth.leavers) {
    CHECK(week >= spec.attrition_min_departure_week);
    CHECK(week <= spec.attrition_max_departure_week);
  }
}

TEST_CASE("generator: manifest totals match the emitted records (recount oracle)") {
  testsupport::TempDir dir("synth-recount");
  SynthSpec spec;
  spec.treatment_users = 12;
  spec.control_users = 15;
  spec.seed = 99;
  auto out = generate(spec, dir / "corpus");
  auto lines = read_lines(out.records_path);
  CHECK(lines.size() == out.truth.record_count);
  std::map<std::string, std::uint64_t> subs;
  std::set<std::string> ids;
  for (const auto& l : lines) {
    auto rec = parse_activity_record(l, Kind::comment);
    REQUIRE(rec.has_value());
    ++subs[rec->subreddit];
    ids.insert(rec->record_id);
  }
  CHECK(subs == out.truth.subreddit_counts);
  CHECK(ids.size() == lines.size());  // unique ids
}

TEST_CASE("generator: byte-identical output per seed, different across seeds") {
  testsupport::TempDir dir("synth-seeded");
  SynthSpec spec;
  spec.treatment_users = 8;
  spec.control_users = 8;
  spec.seed = 7;
  generate(spec, dir / "a");
  generate(spec, dir / "b");
  CHECK(testsupport::read_file(dir.path() / "a" / "records.ndjson") ==
        testsupport::read_file(dir.path() / "b" / "records.ndjson"));
  spec.seed = 8;
  generate(spec, dir / "c");
  CHECK(testsupport::read_file(dir.path() / "a" / "records.ndjson") !=
        testsupport::read_file(dir.path() / "c" / "records.ndjson"));
}

TEST_CASE("generator: qualifying treatment users actually have >= 10 pre-window records") {
  testsupport::TempDir dir("synth-qualify");
  SynthSpec spec;
  spec.treatment_users = 30;
  spec.control_users = 0;
  spec.rate_treatment_in_treatment = 0.3;  // mean ~15.6/year, some below 10
  spec.seed = 5;
  auto out = generate(spec, dir / "corpus");
  auto lines = read_lines(out.records_path);
  std::int64_t pre_lo = spec.event_time - 365 * kSecondsPerDay;
  std::set<std::string> qualifying(out.truth.qualifying_treatment.begin(),
                                   out.truth.qualifying_treatment.end());
  for (const auto& user : out.truth.treatment_users) {
    auto n = oracle_recount(lines, user, pre_lo, spec.event_time, spec.treatment_subreddit);
    CHECK((n >= 10) == (qualifying.count(user) > 0));
  }
  CHECK(!qualifying.empty());
  CHECK(qualifying.size() < out.truth.treatment_users.size());
}

TEST_CASE("synth spec json round trip and unknown-key rejection") {
  testsupport::TempDir dir("synth-spec");
  SynthSpec spec;
  spec.seed = 123;
  spec.did_shift = -2.5;
  spec.changepoints.push_back({0, 4.0, 0.3, "treatment"});
  testsupport::write_lines(dir / "spec.json", {spec.to_json()});
  SynthSpec loaded = SynthSpec::from_json_file(dir / "spec.json");
  CHECK(loaded.seed == 123);
  CHECK(loaded.did_shift == -2.5);
  REQUIRE(loaded.changepoints.size() == 1);
  CHECK(loaded.changepoints[0].rate_multiplier == 4.0);

  testsupport::write_lines(dir / "bad.json", {R"({"seed": 1, "nonsense": true})"});
  CHECK_THROWS_AS(SynthSpec::from_json_file(dir / "bad.json"), DataError);
}

TEST_CASE("oracle_permutation_exact enumerates C(n,k) subsets") {
  auto stats = oracle_permutation_exact(6, 3, [](const std::vector<std::size_t>& idx) {
    double s = 0;
    for (auto i : idx) s += static_cast<double>(i);
    return s;
  });
  CHECK(stats.size() == 20);
  // min subset {0,1,2} -> 3, max {3,4,5} -> 12
  CHECK(*std::min_element(stats.begin(), stats.end()) == 3.0);
  CHECK(*std::max_element(stats.begin(), stats.end()) == 12.0);
}

TEST_CASE("poisson_week_matrix is deterministic and rate-sensitive") {
  auto rate = [](int week, int) { return week >= 0 ? 20.0 : 5.0; };
  auto a = poisson_week_matrix(123, -10, 9, 2, rate);
  auto b = poisson_week_matrix(123, -10, 9, 2, rate);
  CHECK(a == b);
  CHECK(a.topRows(10).sum() < a.bottomRows(10).sum());
}
