#include <doctest.h>

#include <cmath>

#include "shockkit/predictor.hpp"
#include "shockkit/synthlab.hpp"
#include "test_support.hpp"

using namespace shockkit;
using namespace shockkit::predictor;

namespace {

const std::int64_t kEvent = 2000LL * kSecondsPerWeek;

std::string line(const std::string& author, const std::string& sub, std::int64_t ts,
                 const std::string& id) {
  return record_to_json_line(ActivityRecord{author, sub, ts, Kind::comment, id});
}

EventStore store_from(const testsupport::TempDir& dir, const std::vector<std::string>& lines,
                      const std::string& tag = "store") {
  auto input = dir / (tag + ".ndjson");
  testsupport::write_lines(input, lines);
  ingest({{input, Kind::comment}}, IngestOptions{}, dir / tag);
  return EventStore::open(dir / tag);
}

MlpModel random_model(int in, int hidden, std::uint64_t seed) {
  MlpModel m;
  m.config.hidden = hidden;
  Rng rng(seed);
  auto fill = [&](Eigen::MatrixXd& w, int r, int c) {
    w.resize(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) w(i, j) = 1.5 * (2.0 * rng.uniform01() - 1.0);
  };
  fill(m.w1, hidden, in);
  fill(m.w2, hidden, hidden);
  fill(m.w3, 2, hidden);
  auto fillv = [&](Eigen::VectorXd& v, int n) {
    v.resize(n);
    for (int i = 0; i < n; ++i) v(i) = 0.5 * (2.0 * rng.uniform01() - 1.0);
  };
  fillv(m.b1, hidden);
  fillv(m.b2, hidden);
  fillv(m.b3, 2);
  return m;
}

/// Central finite differences over every parameter.
double max_gradient_rel_error(MlpModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t) {
  MlpModel grad = model;
  loss_and_gradients(model, x, t, &grad);
  const double eps = 1e-5;
  double worst = 0.0;
  auto probe = [&](double* param, double analytic) {
    double keep = *param;
    *param = keep + eps;
    double hi = loss_and_gradients(model, x, t, nullptr);
    *param = keep - eps;
    double lo = loss_and_gradients(model, x, t, nullptr);
    *param = keep;
    double fd = (hi - lo) / (2.0 * eps);
    double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
    worst = std::max(worst, rel);
  };
  auto probe_matrix = [&](Eigen::MatrixXd& w, const Eigen::MatrixXd& g) {
    for (Eigen::Index i = 0; i < w.size(); ++i) probe(w.data() + i, g.data()[i]);
  };
  auto probe_vector = [&](Eigen::VectorXd& v, const Eigen::VectorXd& g) {
    for (Eigen::Index i = 0; i < v.size(); ++i) probe(v.data() + i, g.data()[i]);
  };
  probe_matrix(model.w1, grad.w1);
  probe_matrix(model.w2, grad.w2);
  probe_matrix(model.w3, grad.w3);
  probe_vector(model.b1, grad.b1);
  probe_vector(model.b2, grad.b2);
  probe_vector(model.b3, grad.b3);
  return worst;
}

/// Separable synthetic design: leavers concentrate on the last column.
void separable_data(std::uint64_t seed, int n, int m, Eigen::MatrixXd& x, Eigen::VectorXi& y) {
  Rng rng(seed);
  x.resize(n, m);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    bool leaver = i % 2 == 0;
    y(i) = leaver ? 1 : 0;
    for (int j = 0; j < m; ++j) x(i, j) = std::log1p(static_cast<double>(rng.poisson(3.0)));
    x(i, m - 1) = std::log1p(static_cast<double>(rng.poisson(leaver ? 40.0 : 1.0)));
  }
}

}  // namespace

TEST_CASE("gradients match central finite differences at random points") {
  Rng rng(90210);
  for (int trial = 0; trial < 3; ++trial) {
    MlpModel model = random_model(6, 5, derive_seed(1, 2, static_cast<std::uint64_t>(trial)));
    Eigen::MatrixXd x(7, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * rng.uniform01();
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(7, 2);
    for (int i = 0; i < 7; ++i) t(i, i % 2) = 1.0;
    SUBCASE("log-transformed loss") { CHECK(max_gradient_rel_error(model, x, t) < 1e-4); }
    SUBCASE("plain MSE loss") {
      model.config.plain_mse = true;
      CHECK(max_gradient_rel_error(model, x, t) < 1e-4);
    }
  }
}

TEST_CASE("all-zero inputs with zero weights: output is sigmoid of the output bias") {
  MlpModel m = random_model(4, 3, 1);
  m.w1.setZero();
  m.w2.setZero();
  m.w3.setZero();
  m.b1.setZero();
  m.b2.setZero();
  m.b3 << 0.3, -0.7;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 4);
  Eigen::MatrixXd out = m.forward(x);
  CHECK(out(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-0.3))));
  CHECK(out(0, 1) == doctest::Approx(1.0 / (1.0 + std::exp(0.7))));
  // bias gradient matches finite differences in the degenerate case too
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(2, 2);
  t(0, 0) = 1.0;
  t(1, 1) = 1.0;
  CHECK(max_gradient_rel_error(m, x, t) < 1e-4);
}

TEST_CASE("training loss strictly decreases over the first 10 epochs on separable data") {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  separable_data(77, 60, 5, x, y);
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(x.rows(), 2);
  for (Eigen::Index i = 0; i < y.size(); ++i) targets(i, y(i) != 0 ? 1 : 0) = 1.0;
  MlpConfig config;
  config.hidden = 8;
  config.seed = 5;
  double prev = 1e300;
  for (int epochs = 1; epochs <= 10; ++epochs) {
    MlpConfig c = config;
    c.epochs = epochs;
    MlpModel m = train(x, y, c);
    double loss = loss_and_gradients(m, x, targets, nullptr);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("train rejects single-class data") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 3);
  Eigen::VectorXi y = Eigen::VectorXi::Ones(6);
  CHECK_THROWS_AS(train(x, y, MlpConfig{}), DataError);
}

TEST_CASE("training is deterministic given a seed") {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  separable_data(31, 40, 4, x, y);
  MlpConfig config;
  config.hidden = 6;
  config.epochs = 10;
  config.seed = 999;
  MlpModel a = train(x, y, config);
  MlpModel b = train(x, y, config);
  CHECK(a.w1 == b.w1);
  CHECK(a.w2 == b.w2);
  CHECK(a.w3 == b.w3);
  CHECK(a.b1 == b.b1);
  CHECK(a.b3 == b.b3);
}

TEST_CASE("predict: tie goes to stay, ranking score is leave share") {
  MlpModel m = random_model(2, 2, 4);
  m.w1.setZero();
  m.w2.setZero();
  m.w3.setZero();
  m.b1.setZero();
  m.b2.setZero();
  m.b3 << 0.0, 0.0;  // symmetric outputs
  Prediction tie = predict(m, Eigen::VectorXd::Zero(2));
  CHECK(tie.label == 0);
  CHECK(tie.score == doctest::Approx(0.5));
  m.b3 << -2.0, 2.0;  // leave node dominant
  Prediction leave = predict(m, Eigen::VectorXd::Zero(2));
  CHECK(leave.label == 1);
  CHECK(leave.score > 0.5);
}

TEST_CASE("batch predictions are invariant to input order") {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  separable_data(55, 30, 4, x, y);
  MlpConfig config;
  config.hidden = 6;
  config.epochs = 5;
  MlpModel m = train(x, y, config);
  std::vector<double> scores;
  for (Eigen::Index i = 0; i < x.rows(); ++i) scores.push_back(predict(m, x.row(i).transpose()).score);
  // reversed order
  for (Eigen::Index i = x.rows() - 1; i >= 0; --i)
    CHECK(predict(m, x.row(i).transpose()).score == scores[static_cast<std::size_t>(i)]);
}

TEST_CASE("auc: perfect, reversed, and brute-force parity") {
  CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(auc({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));

  Rng rng(121212);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
      // quantized scores force ties
      scores.push_back(static_cast<double>(rng.below(8)) / 8.0);
      labels.push_back(rng.below(2) == 0 ? 0 : 1);
    }
    int pos = 0;
    for (int l : labels) pos += l;
    if (pos == 0 || pos == 30) continue;
    // all-pairs oracle
    double wins = 0, ties = 0, total = 0;
    for (int i = 0; i < 30; ++i) {
      if (labels[i] == 0) continue;
      for (int j = 0; j < 30; ++j) {
        if (labels[j] != 0) continue;
        total += 1.0;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) ties += 1.0;
      }
    }
    CHECK(auc(scores, labels) == doctest::Approx((wins + 0.5 * ties) / total).epsilon(1e-12));
  }
}

TEST_CASE("auc is invariant under strictly increasing score transforms") {
  Rng rng(333);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    scores.push_back(rng.uniform01());
    labels.push_back(rng.below(2) == 0 ? 0 : 1);
  }
  labels[0] = 1;
  labels[1] = 0;
  double base = auc(scores, labels);
  std::vector<double> warped;
  for (double s : scores) warped.push_back(std::exp(3.0 * s) + 1.0);
  CHECK(auc(warped, labels) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("f1 on the leave class") {
  CHECK(f1({1, 1, 0, 0}, {1, 0, 1, 0}) == doctest::Approx(0.5));
  CHECK(f1({1, 1, 1, 1}, {1, 1, 1, 1}) == doctest::Approx(1.0));
  CHECK(f1({0, 0}, {0, 0}) == doctest::Approx(0.0));  // no positives anywhere
}

TEST_CASE("stratified folds partition every example exactly once") {
  Eigen::VectorXi labels(23);
  for (int i = 0; i < 23; ++i) labels(i) = i % 3 == 0 ? 1 : 0;
  auto folds = stratified_folds(labels, 5, 99);
  REQUIRE(folds.size() == 23);
  std::vector<int> count(5, 0);
  for (int f : folds) {
    REQUIRE(f >= 0);
    REQUIRE(f < 5);
    ++count[static_cast<std::size_t>(f)];
  }
  int total = 0;
  for (int c : count) total += c;
  CHECK(total == 23);
  // class balance: each fold gets 1-2 of the 8 positives
  for (int f = 0; f < 5; ++f) {
    int pos = 0;
    for (int i = 0; i < 23; ++i)
      if (folds[static_cast<std::size_t>(i)] == f && labels(i) == 1) ++pos;
    CHECK(pos >= 1);
    CHECK(pos <= 2);
  }
}

TEST_CASE("cross_validate on a separable cohort reaches high AUC") {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  separable_data(2024, 100, 6, x, y);
  MlpConfig config;
  config.hidden = 8;
  config.epochs = 150;
  config.seed = 3;
  CvResult r = cross_validate(x, y, 5, config);
  CHECK(r.folds.size() == 5);
  CHECK(r.mean_auc >= 0.95);
  CHECK(r.ci95_auc >= 0.0);
}

TEST_CASE("build_features: vocabulary, zero rows, and labels") {
  testsupport::TempDir dir("pred-features");
  std::vector<std::string> lines;
  std::int64_t in_window = kEvent - 100 * kSecondsPerDay;
  std::int64_t out_of_window = kEvent - 300 * kSecondsPerDay;
  // t1 touches apple+banana in window; t2 touches banana out of window only
  for (int i = 0; i < 12; ++i) lines.push_back(line("t1", "treat", in_window + i, "t1t" + std::to_string(i)));
  for (int i = 0; i < 12; ++i) lines.push_back(line("t2", "treat", in_window + i, "t2t" + std::to_string(i)));
  for (int i = 0; i < 3; ++i) lines.push_back(line("t1", "apple", in_window + 50 + i, "t1a" + std::to_string(i)));
  for (int i = 0; i < 2; ++i) lines.push_back(line("t1", "banana", in_window + 90 + i, "t1b" + std::to_string(i)));
  for (int i = 0; i < 9; ++i) lines.push_back(line("t2", "banana", out_of_window + i, "t2b" + std::to_string(i)));
  // t1 stays active post-event, t2 leaves
  lines.push_back(line("t1", "apple", kEvent + 40 * kSecondsPerDay, "t1post"));
  EventStore store = store_from(dir, lines);

  cohort::Cohort c;
  c.spec.treatment_subreddit = "treat";
  c.spec.event_time = kEvent;
  c.treatment_users = {"t1", "t2"};
  auto [space, data] = build_features(store, c);
  // vocabulary: union over treatment users of 6-month-window subreddits
  CHECK(space.vocabulary == std::vector<std::string>{"apple", "banana", "treat"});
  REQUIRE(data.users.size() == 2);
  CHECK(data.features(0, 0) == doctest::Approx(std::log1p(3.0)));
  CHECK(data.features(0, 1) == doctest::Approx(std::log1p(2.0)));
  CHECK(data.features(1, 0) == 0.0);  // t2 never touched apple in window
  CHECK(data.features(1, 1) == 0.0);  // t2's banana records fall outside
  CHECK(data.labels(0) == 0);
  CHECK(data.labels(1) == 1);
}

TEST_CASE("transfer: self-transfer equals in-sample; disjoint vocabulary gives AUC 0.5") {
  testsupport::TempDir dir("pred-transfer");
  // training corpus: users post in subs fruit0..fruit3; leavers love fruit3
  Rng rng(808);
  std::vector<std::string> train_lines, eval_lines;
  cohort::Cohort train_c, eval_c;
  train_c.spec.treatment_subreddit = "treat";
  train_c.spec.event_time = kEvent;
  eval_c.spec = train_c.spec;
  std::int64_t w0 = kEvent - 150 * kSecondsPerDay;
  for (int i = 0; i < 40; ++i) {
    std::string u = "tr" + std::to_string(i);
    train_c.treatment_users.push_back(u);
    bool leaver = i % 2 == 0;
    for (int k = 0; k < 12; ++k)
      train_lines.push_back(line(u, "treat", w0 + k, u + "t" + std::to_string(k)));
    int heavy = leaver ? 30 + static_cast<int>(rng.below(10)) : static_cast<int>(rng.below(3));
    for (int k = 0; k < heavy; ++k)
      train_lines.push_back(line(u, "fruit3", w0 + 100 + k, u + "f" + std::to_string(k)));
    if (!leaver)
      train_lines.push_back(line(u, "fruit0", kEvent + 60 * kSecondsPerDay, u + "-post"));
  }
  // eval corpus: completely different subreddit names
  for (int i = 0; i < 20; ++i) {
    std::string u = "ev" + std::to_string(i);
    eval_c.treatment_users.push_back(u);
    for (int k = 0; k < 12; ++k)
      eval_lines.push_back(line(u, "veggie" + std::to_string(k % 4), w0 + k, u + "v" + std::to_string(k)));
    if (i % 2 == 0) eval_lines.push_back(line(u, "veggie0", kEvent + 30 * kSecondsPerDay, u + "-post"));
  }
  std::sort(train_c.treatment_users.begin(), train_c.treatment_users.end());
  std::sort(eval_c.treatment_users.begin(), eval_c.treatment_users.end());
  EventStore train_store = store_from(dir, train_lines, "train");
  EventStore eval_store = store_from(dir, eval_lines, "eval");

  MlpConfig config;
  config.hidden = 8;
  config.epochs = 30;
  config.seed = 17;

  // self-transfer == in-sample evaluation
  auto [space, data] = build_features(train_store, train_c);
  MlpModel model = train(data.features, data.labels, config);
  FoldMetrics in_sample = evaluate(model, data.features, data.labels);
  FoldMetrics self = transfer_eval(train_store, train_c, train_store, train_c, config);
  CHECK(self.auc == doctest::Approx(in_sample.auc));
  CHECK(self.f1 == doctest::Approx(in_sample.f1));

  // disjoint vocabularies: all eval features are zero, all scores tie
  FoldMetrics cross = transfer_eval(train_store, train_c, eval_store, eval_c, config);
  CHECK(cross.auc == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("model json round trip preserves parameters") {
  testsupport::TempDir dir("pred-json");
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  separable_data(9, 30, 4, x, y);
  MlpConfig config;
  config.hidden = 5;
  config.epochs = 5;
  MlpModel m = train(x, y, config);
  Provenance prov{"shockkit predict --test", 9, "feedbeef"};
  m.save(dir / "model.json", prov);
  MlpModel back = MlpModel::from_json_file(dir / "model.json");
  CHECK(back.w1.isApprox(m.w1, 1e-15));
  CHECK(back.w3.isApprox(m.w3, 1e-15));
  CHECK(back.b3.isApprox(m.b3, 1e-15));
  CHECK(back.config.hidden == 5);
}
