// shockkit: batch analyses of community-shock effects on user activity.
//
// Subcommands: synth, ingest, cohort, attrition, did, changepoint, predict.
// Exit codes: 0 success, 2 usage error, 3 data error.

#include <CLI11.hpp>
#include <fnmatch.h>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "shockkit/attrition.hpp"
#include "shockkit/bocpd.hpp"
#include "shockkit/cohort.hpp"
#include "shockkit/did.hpp"
#include "shockkit/event_store.hpp"
#include "shockkit/predictor.hpp"
#include "shockkit/synthlab.hpp"
#include "shockkit/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shockkit;

namespace {

std::string g_command_line;

std::string quote_arg(const std::string& a) {
  if (a.find_first_of(" \t\"'") == std::string::npos) return a;
  std::string out = "'";
  for (char c : a) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  out += "'";
  return out;
}

/// Expands a single glob (wildcards in the filename component only) into a
/// sorted file list; plain paths pass through.
std::vector<fs::path> expand_glob(const std::string& pattern) {
  fs::path p(pattern);
  std::string name = p.filename().string();
  if (name.find_first_of("*?[") == std::string::npos) return {p};
  fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (fnmatch(name.c_str(), entry.path().filename().string().c_str(), 0) == 0)
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::int64_t parse_time_or_die(const std::string& text, const std::string& flag) {
  auto t = parse_time_utc(text);
  if (!t) throw DataError("cannot parse " + flag + " timestamp: " + text);
  return *t;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (cur.empty()) continue;
      try {
        out.push_back(std::stoi(cur));
      } catch (...) {
        throw DataError("bad integer in " + flag + ": " + cur);
      }
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (out.empty()) throw DataError(flag + " must list at least one integer");
  return out;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write output file: " + path.string());
  out << j.dump(2) << '\n';
}

json provenance_json(const Provenance& prov) {
  json j = {{"command", prov.command_line}, {"store_checksum", prov.store_checksum}};
  if (prov.seed) j["seed"] = *prov.seed;
  return j;
}

struct CohortInputs {
  cohort::Cohort cohort;
  EventStore store;
};

CohortInputs load_cohort_and_store(const std::string& cohort_path, const std::string& store_override) {
  cohort::Cohort c = cohort::Cohort::from_json_file(cohort_path);
  std::string store_path = store_override.empty() ? c.store_path : store_override;
  EventStore store = EventStore::open(store_path);
  if (!store_override.empty() && store.checksum() != c.store_checksum)
    std::cerr << "warning: store checksum differs from the one the cohort was built against\n";
  return CohortInputs{std::move(c), std::move(store)};
}

// ---------------------------------------------------------------------------
// Subcommand wiring
// ---------------------------------------------------------------------------

struct IngestArgs {
  std::vector<std::string> inputs, input_posts, input_comments;
  std::string out, from, to, kind = "comment";
  int threads = default_thread_count();
  int partitions = 32;
};

int run_ingest(const IngestArgs& a) {
  IngestOptions opt;
  if (!a.from.empty()) opt.from_ts = parse_time_or_die(a.from, "--from");
  if (!a.to.empty()) opt.to_ts = parse_time_or_die(a.to, "--to");
  opt.threads = std::max(1, a.threads);
  opt.partition_count = a.partitions;
  auto default_kind = kind_from_name(a.kind);
  if (!default_kind) throw DataError("--kind must be post or comment");

  std::vector<IngestSource> sources;
  auto add = [&](const std::vector<std::string>& globs, Kind kind) {
    for (const auto& g : globs) {
      auto files = expand_glob(g);
      if (files.empty()) throw DataError("no input files match: " + g);
      for (const auto& f : files) sources.push_back({f, kind});
    }
  };
  add(a.inputs, *default_kind);
  add(a.input_posts, Kind::post);
  add(a.input_comments, Kind::comment);
  if (sources.empty()) throw DataError("ingest requires at least one --input");

  IngestStats stats = ingest(sources, opt, a.out);

  // Checksum comes from the manifest; opening the store here would pull the
  // whole corpus into memory for nothing.
  std::string checksum;
  {
    std::ifstream mf(fs::path(a.out) / "manifest.json");
    json manifest = json::parse(mf, nullptr, false);
    if (!manifest.is_discarded()) checksum = manifest.value("store_checksum", "");
  }
  Provenance prov{g_command_line, std::nullopt, checksum};
  json report;
  report["provenance"] = provenance_json(prov);
  report["sources"] = json::array();
  for (const auto& s : sources)
    report["sources"].push_back({{"path", s.path.string()}, {"kind", std::string(kind_name(s.default_kind))}});
  report["stats"] = {{"lines", stats.lines},
                     {"kept", stats.kept},
                     {"duplicates", stats.duplicates},
                     {"parse_errors", stats.parse_errors},
                     {"missing_field", stats.missing_field},
                     {"bad_value", stats.bad_value},
                     {"filtered_time", stats.filtered_time},
                     {"deleted_author", stats.deleted_author}};
  write_json_file(fs::path(a.out) / "ingest_report.json", report);
  std::cout << "ingested " << stats.kept << " records (" << stats.duplicates << " duplicates, "
            << stats.parse_errors + stats.missing_field + stats.bad_value << " bad lines) into "
            << a.out << "\n";
  return 0;
}

struct CohortArgs {
  std::string store, subreddit, event, karma, out;
  std::string hub = "AskReddit";
  std::string rule = "per-user";
  int min_activity = 10;
  int max_control_subs = 200;
};

int run_cohort(const CohortArgs& a) {
  EventStore store = EventStore::open(a.store);
  cohort::EventSpec spec;
  spec.treatment_subreddit = a.subreddit;
  spec.event_time = parse_time_or_die(a.event, "--event");
  spec.min_activity = a.min_activity;
  cohort::CohortOptions options;
  options.hub_subreddit = a.hub;
  options.max_control_subreddits = a.max_control_subs;
  if (a.rule == "per-user") options.rule = cohort::ControlSubredditRule::per_user_min;
  else if (a.rule == "total") options.rule = cohort::ControlSubredditRule::total_posts;
  else throw DataError("--control-a-rule must be per-user or total");
  if (!a.karma.empty()) options.karma = cohort::load_karma_csv(a.karma);

  cohort::Cohort c = cohort::build_cohort(store, spec, options);
  Provenance prov{g_command_line, std::nullopt, store.checksum()};
  c.save(a.out, prov);
  std::cout << "cohort: " << c.treatment_users.size() << " treatment users, "
            << c.control_a.pairs.size() << " matched in Control A ("
            << c.control_a.unmatched_treatment.size() << " unmatched), "
            << c.control_b.pairs.size() << " in Control B, " << c.control_subreddits.size()
            << " control subreddits -> " << a.out << "\n";
  return 0;
}

struct AttritionArgs {
  std::string cohort, store, out;
  std::string graces = "1,2,3,4";
  std::string brackets = "10,20,40,80";
};

int run_attrition(const AttritionArgs& a) {
  auto in = load_cohort_and_store(a.cohort, a.store);
  auto graces = parse_int_list(a.graces, "--grace");
  auto edges = parse_int_list(a.brackets, "--brackets");
  auto table = attrition::attrition_report(in.store, in.cohort, graces, edges);
  Provenance prov{g_command_line, std::nullopt, in.store.checksum()};
  attrition::write_attrition_csv(table, a.out, prov);
  std::cout << "attrition table (" << table.cells.size() << " cells, " << table.tests.size()
            << " tests) -> " << a.out << "\n";
  return 0;
}

struct DidArgs {
  std::string cohort, store, out;
  int sims = 2000;
  std::uint64_t seed = 1;
  int threads = default_thread_count();
};

int run_did(const DidArgs& a) {
  auto in = load_cohort_and_store(a.cohort, a.store);
  const auto& c = in.cohort;
  std::int64_t anchor = c.spec.event_time;

  did::WeeklySeries treat = did::weekly_mean_series(in.store, c.treatment_users, anchor);
  did::WeeklySeries ctrl_a = did::weekly_mean_series(in.store, c.matched_controls_a(), anchor);
  did::WeeklySeries ctrl_b = did::weekly_mean_series(in.store, c.matched_controls_b(), anchor);

  Provenance prov{g_command_line, a.seed, in.store.checksum()};
  json records = json::array();
  struct Side {
    const char* name;
    const did::WeeklySeries* series;
    std::uint64_t salt;
  };
  for (const Side& side : {Side{"control_a", &ctrl_a, 0}, Side{"control_b", &ctrl_b, 1}}) {
    did::DidParts parts = did::did_statistic(treat, *side.series);
    auto perm = did::permutation_pvalue(in.store, c, parts, *side.series, a.sims,
                                        derive_seed(a.seed, 100, side.salt), a.threads);
    records.push_back({{"control", side.name},
                       {"delta_pre", parts.delta_pre},
                       {"delta_post", parts.delta_post},
                       {"did", parts.did},
                       {"n_sims", a.sims},
                       {"seed", a.seed},
                       {"p_one_tailed_lower", perm.p_one_tailed_lower}});
    std::cout << "DiD vs " << side.name << ": " << parts.did
              << " (p = " << perm.p_one_tailed_lower << ")\n";
  }
  json out;
  out["provenance"] = provenance_json(prov);
  out["results"] = records;
  write_json_file(a.out + ".json", out);

  CsvWriter csv(a.out + "_series.csv", prov.comment_lines(),
                {"week", "treatment", "control_a", "control_b", "masked"});
  for (int w = treat.week_lo; w <= treat.week_hi; ++w) {
    csv.row({std::to_string(w), format_double(treat.at(w)), format_double(ctrl_a.at(w)),
             format_double(ctrl_b.at(w)), treat.masked(w) ? "1" : "0"});
  }
  return 0;
}

struct ChangepointArgs {
  std::string cohort, store, out;
  double threshold = 0.90;
  double hazard = 0.01;
  double alpha0 = 1.0;
  double beta0 = 1.0;
  int window = 4;
  std::string brackets = "10,20,40,80";
  bool traces = false;
  int threads = default_thread_count();
};

int run_changepoint(const ChangepointArgs& a) {
  auto in = load_cohort_and_store(a.cohort, a.store);
  bocpd::BocpdParams params;
  params.threshold = a.threshold;
  params.hazard = a.hazard;
  params.alpha0 = a.alpha0;
  params.beta0 = a.beta0;
  params.validate();
  auto edges = parse_int_list(a.brackets, "--brackets");
  Provenance prov{g_command_line, std::nullopt, in.store.checksum()};

  auto rates = bocpd::cohort_changepoint_rates(in.store, in.cohort, params, a.threads);
  {
    CsvWriter csv(a.out + "_rates.csv", prov.comment_lines(), {"group", "week", "fraction_flagged"});
    for (const auto& g : rates.groups)
      for (std::size_t i = 0; i < g.weeks.size(); ++i)
        csv.row({g.group, std::to_string(g.weeks[i]),
                 format_double(g.fraction_flagged(static_cast<Eigen::Index>(i)))});
  }
  {
    json band;
    band["provenance"] = provenance_json(prov);
    band["band"] = rates.band;
    band["params"] = {{"threshold", params.threshold},
                      {"hazard", params.hazard},
                      {"alpha0", params.alpha0},
                      {"beta0", params.beta0}};
    write_json_file(a.out + "_band.json", band);
  }
  auto window_table = bocpd::changepoint_window_rate(in.store, in.cohort, params, a.window, edges,
                                                     a.threads);
  {
    CsvWriter csv(a.out + "_window.csv", prov.comment_lines(),
                  {"group", "bracket", "flagged", "size", "rate", "control", "z", "p_two_sided",
                   "sig_one_tailed"});
    for (const auto& cell : window_table.cells)
      csv.row({cell.group, attrition::bracket_label(cell.bracket, edges), std::to_string(cell.flagged),
               std::to_string(cell.size), format_double(cell.rate), "", "", "", ""});
    for (const auto& t : window_table.tests)
      csv.row({"treatment_vs_" + t.control, attrition::bracket_label(t.bracket, edges), "", "", "",
               t.control, format_double(t.z), format_double(t.p_two_sided),
               t.sig_one_tailed ? "1" : "0"});
  }
  if (a.traces) {
    CsvWriter csv(a.out + "_traces.csv", prov.comment_lines(),
                  {"group", "user", "week", "p_changepoint", "flagged"});
    struct Group {
      const char* name;
      std::vector<std::string> users;
    };
    for (const Group& g : {Group{"treatment", in.cohort.treatment_users},
                           Group{"control_a", in.cohort.matched_controls_a()},
                           Group{"control_b", in.cohort.matched_controls_b()}}) {
      for (const auto& user : g.users) {
        auto m = bocpd::build_user_matrix(in.store, user, in.cohort.spec.event_time);
        auto trace = bocpd::detect_changepoints(m, params);
        for (std::size_t i = 0; i < trace.weeks.size(); ++i) {
          double p = trace.probabilities(static_cast<Eigen::Index>(i));
          csv.row({g.name, user, std::to_string(trace.weeks[i]), format_double(p),
                   p >= params.threshold ? "1" : "0"});
        }
      }
    }
  }
  std::cout << "changepoint outputs -> " << a.out << "_{rates.csv,band.json,window.csv}"
            << (a.traces ? " + traces" : "") << "\n";
  return 0;
}

struct PredictArgs {
  std::string train, eval_cohort, store, eval_store, out;
  int cv = 0;
  int hidden = 64;
  int epochs = 50;
  double lr = 0.01;
  int batch = 32;
  std::uint64_t seed = 1;
  bool plain_mse = false;
};

int run_predict(const PredictArgs& a) {
  if (a.cv <= 0 && a.eval_cohort.empty())
    throw DataError("predict requires --cv K and/or --eval <cohort>");
  auto in = load_cohort_and_store(a.train, a.store);
  predictor::MlpConfig config;
  config.hidden = a.hidden;
  config.epochs = a.epochs;
  config.learning_rate = a.lr;
  config.batch_size = a.batch;
  config.seed = a.seed;
  config.plain_mse = a.plain_mse;

  Provenance prov{g_command_line, a.seed, in.store.checksum()};
  CsvWriter csv(a.out + "_metrics.csv", prov.comment_lines(),
                {"cohort", "mode", "fold", "auc", "f1"});
  std::string cohort_name = in.cohort.spec.treatment_subreddit;

  auto [space, data] = predictor::build_features(in.store, in.cohort);
  if (a.cv > 0) {
    auto cv = predictor::cross_validate(data.features, data.labels, a.cv, config);
    for (std::size_t f = 0; f < cv.folds.size(); ++f)
      csv.row({cohort_name, "cv", std::to_string(f), format_double(cv.folds[f].auc),
               format_double(cv.folds[f].f1)});
    csv.row({cohort_name, "cv_mean", "", format_double(cv.mean_auc), format_double(cv.mean_f1)});
    csv.row({cohort_name, "cv_ci95", "", format_double(cv.ci95_auc), format_double(cv.ci95_f1)});
    std::cout << "cv: AUC " << cv.mean_auc << " +- " << cv.ci95_auc << ", F1 " << cv.mean_f1
              << "\n";
  }
  predictor::MlpModel model = predictor::train(data.features, data.labels, config);
  if (!a.eval_cohort.empty()) {
    auto eval_in = load_cohort_and_store(a.eval_cohort, a.eval_store);
    predictor::Dataset eval_data = predictor::features_for_users(
        eval_in.store, eval_in.cohort, eval_in.cohort.treatment_users, space);
    auto m = predictor::evaluate(model, eval_data.features, eval_data.labels);
    csv.row({eval_in.cohort.spec.treatment_subreddit, "transfer", "", format_double(m.auc),
             format_double(m.f1)});
    std::cout << "transfer: AUC " << m.auc << ", F1 " << m.f1 << "\n";
  }
  model.save(a.out + "_model.json", prov);
  return 0;
}

struct SynthArgs {
  std::string spec, out;
};

int run_synth(const SynthArgs& a) {
  synthlab::SynthSpec spec = synthlab::SynthSpec::from_json_file(a.spec);
  auto out = synthlab::generate(spec, a.out);
  Provenance prov{g_command_line, spec.seed, ""};
  json report;
  report["provenance"] = provenance_json(prov);
  report["spec"] = json::parse(spec.to_json());
  report["record_count"] = out.truth.record_count;
  report["records"] = out.records_path.string();
  report["ground_truth"] = out.truth_path.string();
  write_json_file(fs::path(a.out) / "synth_report.json", report);
  std::cout << "synthetic corpus: " << out.truth.record_count << " records -> " << a.out << "\n";
  return 0;
}

/// --config JSON: top-level {"flag-name": value} defaults; real flags win.
std::vector<std::string> apply_config_defaults(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end() || it + 1 == args.end()) return args;
  fs::path config_path(*(it + 1));
  std::ifstream in(config_path);
  if (!in) throw DataError("cannot read --config file: " + config_path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("--config must hold a JSON object");
  std::vector<std::string> merged;
  // subcommand name stays first
  std::size_t insert_at = 0;
  if (!args.empty() && !args[0].empty() && args[0][0] != '-') {
    merged.push_back(args[0]);
    insert_at = 1;
  }
  for (auto kv = j.begin(); kv != j.end(); ++kv) {
    merged.push_back("--" + kv.key());
    if (kv.value().is_boolean()) {
      if (!kv.value().get<bool>()) merged.pop_back();
      continue;
    }
    merged.push_back(kv.value().is_string() ? kv.value().get<std::string>() : kv.value().dump());
  }
  for (std::size_t i = insert_at; i < args.size(); ++i) {
    if (args[i] == "--config") {
      ++i;  // drop the pair, already consumed
      continue;
    }
    merged.push_back(args[i]);
  }
  return merged;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) {
    if (i) g_command_line += ' ';
    g_command_line += quote_arg(argv[i]);
  }

  CLI::App app{"shockkit: community-shock activity analyses over NDJSON archives"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  IngestArgs ingest_args;
  auto* cmd_ingest = app.add_subcommand("ingest", "build an event store from NDJSON archives");
  cmd_ingest->add_option("--input", ingest_args.inputs, "input NDJSON file or glob")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd_ingest->add_option("--input-posts", ingest_args.input_posts, "post-archive file or glob")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd_ingest
      ->add_option("--input-comments", ingest_args.input_comments, "comment-archive file or glob")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd_ingest->add_option("--out", ingest_args.out, "store directory to create")->required();
  cmd_ingest->add_option("--from", ingest_args.from, "keep records at/after this time (ISO8601 or epoch)");
  cmd_ingest->add_option("--to", ingest_args.to, "keep records before this time");
  cmd_ingest->add_option("--kind", ingest_args.kind, "default record kind for --input files");
  cmd_ingest->add_option("--threads", ingest_args.threads, "worker threads");
  cmd_ingest->add_option("--partitions", ingest_args.partitions, "store partition count")
      ->check(CLI::Range(1, 4096));

  CohortArgs cohort_args;
  auto* cmd_cohort = app.add_subcommand("cohort", "build treatment + matched control groups");
  cmd_cohort->add_option("--store", cohort_args.store, "event store directory")->required();
  cmd_cohort->add_option("--subreddit", cohort_args.subreddit, "treatment subreddit")->required();
  cmd_cohort->add_option("--event", cohort_args.event, "event time (ISO8601 or epoch)")->required();
  cmd_cohort->add_option("--min-activity", cohort_args.min_activity, "pre-window activity threshold");
  cmd_cohort->add_option("--karma", cohort_args.karma, "karma sidecar CSV (user,karma)");
  cmd_cohort->add_option("--hub", cohort_args.hub, "Control-B hub subreddit");
  cmd_cohort->add_option("--control-a-rule", cohort_args.rule,
                         "control-subreddit qualifying rule: per-user | total");
  cmd_cohort->add_option("--max-control-subs", cohort_args.max_control_subs,
                         "control subreddit cap");
  cmd_cohort->add_option("--out", cohort_args.out, "cohort JSON path")->required();

  AttritionArgs attrition_args;
  auto* cmd_attrition = app.add_subcommand("attrition", "grace-period inactivity analysis");
  cmd_attrition->add_option("--cohort", attrition_args.cohort, "cohort JSON")->required();
  cmd_attrition->add_option("--store", attrition_args.store, "override store path");
  cmd_attrition->add_option("--grace", attrition_args.graces, "grace weeks, comma separated");
  cmd_attrition->add_option("--brackets", attrition_args.brackets, "activity bracket edges");
  cmd_attrition->add_option("--out", attrition_args.out, "output CSV")->required();

  DidArgs did_args;
  auto* cmd_did = app.add_subcommand("did", "difference-in-differences with permutation p-values");
  cmd_did->add_option("--cohort", did_args.cohort, "cohort JSON")->required();
  cmd_did->add_option("--store", did_args.store, "override store path");
  cmd_did->add_option("--sims", did_args.sims, "permutation simulations")->check(CLI::Range(1, 10000000));
  cmd_did->add_option("--seed", did_args.seed, "simulation seed");
  cmd_did->add_option("--threads", did_args.threads, "worker threads");
  cmd_did->add_option("--out", did_args.out, "output prefix (.json, _series.csv)")->required();

  ChangepointArgs cp_args;
  auto* cmd_cp = app.add_subcommand("changepoint", "per-user behavior-change detection");
  cmd_cp->add_option("--cohort", cp_args.cohort, "cohort JSON")->required();
  cmd_cp->add_option("--store", cp_args.store, "override store path");
  cmd_cp->add_option("--threshold", cp_args.threshold, "flag threshold")->check(CLI::Range(0.0, 1.0));
  cmd_cp->add_option("--hazard", cp_args.hazard, "per-week changepoint hazard");
  cmd_cp->add_option("--alpha0", cp_args.alpha0, "Gamma prior shape");
  cmd_cp->add_option("--beta0", cp_args.beta0, "Gamma prior rate");
  cmd_cp->add_option("--window", cp_args.window, "event window in weeks for the rate table");
  cmd_cp->add_option("--brackets", cp_args.brackets, "activity bracket edges");
  cmd_cp->add_flag("--traces", cp_args.traces, "dump per-user probability traces");
  cmd_cp->add_option("--threads", cp_args.threads, "worker threads");
  cmd_cp->add_option("--out", cp_args.out, "output prefix")->required();

  PredictArgs predict_args;
  auto* cmd_predict = app.add_subcommand("predict", "attrition classifier (train/CV/transfer)");
  cmd_predict->add_option("--train", predict_args.train, "training cohort JSON")->required();
  cmd_predict->add_option("--eval", predict_args.eval_cohort, "evaluation cohort JSON (transfer)");
  cmd_predict->add_option("--store", predict_args.store, "override training store path");
  cmd_predict->add_option("--eval-store", predict_args.eval_store, "override evaluation store path");
  cmd_predict->add_option("--cv", predict_args.cv, "cross-validation folds");
  cmd_predict->add_option("--hidden", predict_args.hidden, "hidden layer width");
  cmd_predict->add_option("--epochs", predict_args.epochs, "training epochs");
  cmd_predict->add_option("--lr", predict_args.lr, "learning rate");
  cmd_predict->add_option("--batch", predict_args.batch, "mini-batch size");
  cmd_predict->add_option("--seed", predict_args.seed, "training seed");
  cmd_predict->add_flag("--plain-mse", predict_args.plain_mse, "plain MSE loss instead of log-MSE");
  cmd_predict->add_option("--out", predict_args.out, "output prefix (_metrics.csv, _model.json)")
      ->required();

  SynthArgs synth_args;
  auto* cmd_synth = app.add_subcommand("synth", "generate a seeded synthetic corpus");
  cmd_synth->add_option("--spec", synth_args.spec, "synth spec JSON")->required();
  cmd_synth->add_option("--out", synth_args.out, "output directory")->required();

  // --config is handled before parsing; register it so --help mentions it.
  std::string config_dummy;
  app.add_option("--config", config_dummy, "JSON file with flag defaults (flags win)");
  for (auto* sub : app.get_subcommands({}))
    sub->add_option("--config", config_dummy, "JSON file with flag defaults (flags win)");

  try {
    auto args = apply_config_defaults(argc, argv);
    std::vector<const char*> cargs;
    cargs.push_back(argv[0]);
    for (const auto& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());

    if (cmd_ingest->parsed()) return run_ingest(ingest_args);
    if (cmd_cohort->parsed()) return run_cohort(cohort_args);
    if (cmd_attrition->parsed()) return run_attrition(attrition_args);
    if (cmd_did->parsed()) return run_did(did_args);
    if (cmd_cp->parsed()) return run_changepoint(cp_args);
    if (cmd_predict->parsed()) return run_predict(predict_args);
    if (cmd_synth->parsed()) return run_synth(synth_args);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
