#include "shockkit/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <set>

#include "shockkit/attrition.hpp"

namespace shockkit::predictor {

using nlohmann::json;

std::pair<FeatureSpace, Dataset> build_features(const EventStore& store, const cohort::Cohort& cohort,
                                                int grace_weeks) {
  const auto& spec = cohort.spec;
  std::int64_t w0 = spec.event_time - kFeatureWindowSeconds;
  std::set<std::string> vocab;
  for (const auto& user : cohort.treatment_users) {
    auto aid = store.author_id(user);
    if (!aid) continue;
    const auto& events = store.author_events(*aid);
    auto lo = std::lower_bound(events.begin(), events.end(), w0,
                               [](const EventStore::Event& e, std::int64_t t) { return e.ts < t; });
    for (auto it = lo; it != events.end() && it->ts < spec.event_time; ++it)
      vocab.insert(store.subreddit_name(it->subreddit));
  }
  FeatureSpace space;
  space.vocabulary.assign(vocab.begin(), vocab.end());
  Dataset data = features_for_users(store, cohort, cohort.treatment_users, space, grace_weeks);
  return {std::move(space), std::move(data)};
}

Dataset features_for_users(const EventStore& store, const cohort::Cohort& cohort,
                           const std::vector<std::string>& users, const FeatureSpace& space,
                           int grace_weeks) {
  const auto& spec = cohort.spec;
  std::int64_t w0 = spec.event_time - kFeatureWindowSeconds;
  std::map<std::string, int> col;
  for (std::size_t i = 0; i < space.vocabulary.size(); ++i)
    col[space.vocabulary[i]] = static_cast<int>(i);

  Dataset data;
  data.users = users;
  data.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(users.size()),
                                        static_cast<Eigen::Index>(space.vocabulary.size()));
  data.labels = Eigen::VectorXi::Zero(static_cast<Eigen::Index>(users.size()));
  for (std::size_t u = 0; u < users.size(); ++u) {
    auto aid = store.author_id(users[u]);
    if (aid) {
      const auto& events = store.author_events(*aid);
      auto lo = std::lower_bound(events.begin(), events.end(), w0,
                                 [](const EventStore::Event& e, std::int64_t t) { return e.ts < t; });
      for (auto it = lo; it != events.end() && it->ts < spec.event_time; ++it) {
        auto cit = col.find(store.subreddit_name(it->subreddit));
        if (cit != col.end()) data.features(static_cast<Eigen::Index>(u), cit->second) += 1.0;
      }
    }
    data.labels(static_cast<Eigen::Index>(u)) =
        attrition::is_inactive(store, users[u], spec.event_time, grace_weeks, spec.post_window_s) ? 1 : 0;
  }
  data.features = data.features.unaryExpr([](double v) { return std::log1p(v); });
  return data;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

struct ForwardPass {
  Eigen::MatrixXd z1, a1, z2, a2, z3, out;
};

ForwardPass forward_all(const MlpModel& m, const Eigen::MatrixXd& x) {
  ForwardPass f;
  f.z1 = (x * m.w1.transpose()).rowwise() + m.b1.transpose();
  f.a1 = relu(f.z1);
  f.z2 = (f.a1 * m.w2.transpose()).rowwise() + m.b2.transpose();
  f.a2 = relu(f.z2);
  f.z3 = (f.a2 * m.w3.transpose()).rowwise() + m.b3.transpose();
  f.out = sigmoid(f.z3);
  return f;
}

MlpModel zeros_like(const MlpModel& m) {
  MlpModel g = m;
  g.w1.setZero();
  g.w2.setZero();
  g.w3.setZero();
  g.b1.setZero();
  g.b2.setZero();
  g.b3.setZero();
  return g;
}

}  // namespace

Eigen::MatrixXd MlpModel::forward(const Eigen::MatrixXd& x) const { return forward_all(*this, x).out; }

double loss_and_gradients(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                          MlpModel* gradients) {
  const double n = static_cast<double>(x.rows());
  ForwardPass f = forward_all(model, x);
  Eigen::MatrixXd diff;
  double loss;
  Eigen::MatrixXd dloss_dout;
  if (model.config.plain_mse) {
    diff = f.out - targets;
    loss = diff.array().square().sum() / n;
    dloss_dout = 2.0 * diff / n;
  } else {
    diff = (f.out.array() + 1.0).log().matrix() - (targets.array() + 1.0).log().matrix();
    loss = diff.array().square().sum() / n;
    dloss_dout = (2.0 * diff.array() / (f.out.array() + 1.0)).matrix() / n;
  }
  if (gradients) {
    Eigen::MatrixXd d3 = dloss_dout.array() * (f.out.array() * (1.0 - f.out.array()));
    gradients->w3 = d3.transpose() * f.a2;
    gradients->b3 = d3.colwise().sum().transpose();
    Eigen::MatrixXd d2 =
        (d3 * model.w3).array() * (f.z2.array() > 0.0).cast<double>();
    gradients->w2 = d2.transpose() * f.a1;
    gradients->b2 = d2.colwise().sum().transpose();
    Eigen::MatrixXd d1 =
        (d2 * model.w2).array() * (f.z1.array() > 0.0).cast<double>();
    gradients->w1 = d1.transpose() * x;
    gradients->b1 = d1.colwise().sum().transpose();
  }
  return loss;
}

namespace {

Eigen::MatrixXd one_hot_targets(const Eigen::VectorXi& labels) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(labels.size(), 2);
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) != 0) t(i, 1) = 1.0;  // leave
    else t(i, 0) = 1.0;                 // stay
  }
  return t;
}

void seeded_init(Eigen::MatrixXd& w, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = (2.0 * rng.uniform01() - 1.0) * bound;
}

}  // namespace

MlpModel train(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels, const MlpConfig& config) {
  if (x.rows() != labels.size()) throw DataError("train: feature/label size mismatch");
  Eigen::Index pos = 0;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels(i) != 0) ++pos;
  if (pos < 2 || labels.size() - pos < 2)
    throw DataError("train: need at least two examples per class");
  if (config.hidden < 1) throw DataError("train: hidden width must be >= 1");

  MlpModel m;
  m.config = config;
  const int in = static_cast<int>(x.cols());
  Rng rng(derive_seed(config.seed, 31));
  m.w1 = Eigen::MatrixXd(config.hidden, in);
  m.w2 = Eigen::MatrixXd(config.hidden, config.hidden);
  m.w3 = Eigen::MatrixXd(2, config.hidden);
  seeded_init(m.w1, rng);
  seeded_init(m.w2, rng);
  seeded_init(m.w3, rng);
  m.b1 = Eigen::VectorXd::Zero(config.hidden);
  m.b2 = Eigen::VectorXd::Zero(config.hidden);
  m.b3 = Eigen::VectorXd::Zero(2);

  Eigen::MatrixXd targets = one_hot_targets(labels);
  const Eigen::Index n = x.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  MlpModel grad = zeros_like(m);
  Rng shuffle_rng(derive_seed(config.seed, 32));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with the seeded generator keeps epochs reproducible.
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(shuffle_rng.below(order.size() - i));
      std::swap(order[i], order[j]);
    }
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
      Eigen::MatrixXd bx(len, x.cols());
      Eigen::MatrixXd bt(len, 2);
      for (Eigen::Index r = 0; r < len; ++r) {
        bx.row(r) = x.row(order[static_cast<std::size_t>(start + r)]);
        bt.row(r) = targets.row(order[static_cast<std::size_t>(start + r)]);
      }
      loss_and_gradients(m, bx, bt, &grad);
      m.w1 -= config.learning_rate * grad.w1;
      m.w2 -= config.learning_rate * grad.w2;
      m.w3 -= config.learning_rate * grad.w3;
      m.b1 -= config.learning_rate * grad.b1;
      m.b2 -= config.learning_rate * grad.b2;
      m.b3 -= config.learning_rate * grad.b3;
    }
  }
  return m;
}

Prediction predict(const MlpModel& model, const Eigen::VectorXd& x) {
  Eigen::MatrixXd out = model.forward(x.transpose());
  double stay = out(0, 0), leave = out(0, 1);
  Prediction p;
  p.score = leave + stay > 0.0 ? leave / (leave + stay) : 0.5;
  p.label = leave > stay ? 1 : 0;  // exact tie -> stay
  return p;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DataError("auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double n_pos = 0, n_neg = 0;
  for (int l : labels) (l != 0 ? n_pos : n_neg) += 1.0;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: needs both classes");
  // Rank-sum with mid-ranks for ties.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double mid_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] != 0) rank_sum_pos += mid_rank;
    i = j + 1;
  }
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double f1(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw DataError("f1: size mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    bool p = predicted[i] != 0, a = labels[i] != 0;
    if (p && a) ++tp;
    else if (p) ++fp;
    else if (a) ++fn;
  }
  double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

std::vector<int> stratified_folds(const Eigen::VectorXi& labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw DataError("cross_validate: folds must be >= 2");
  std::vector<int> assignment(static_cast<std::size_t>(labels.size()), 0);
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> members;
    for (Eigen::Index i = 0; i < labels.size(); ++i)
      if ((labels(i) != 0) == (cls == 1)) members.push_back(static_cast<std::size_t>(i));
    Rng rng(derive_seed(seed, 41, static_cast<std::uint64_t>(cls)));
    for (std::size_t i = 0; i + 1 < members.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(members.size() - i));
      std::swap(members[i], members[j]);
    }
    for (std::size_t i = 0; i < members.size(); ++i)
      assignment[members[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  }
  return assignment;
}

FoldMetrics evaluate(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXi& labels) {
  std::vector<double> scores;
  std::vector<int> preds, truth;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Prediction p = predict(model, x.row(i).transpose());
    scores.push_back(p.score);
    preds.push_back(p.label);
    truth.push_back(labels(i));
  }
  FoldMetrics m;
  m.auc = auc(scores, truth);
  m.f1 = f1(preds, truth);
  return m;
}

CvResult cross_validate(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels, int folds,
                        const MlpConfig& config) {
  auto assignment = stratified_folds(labels, folds, config.seed);
  CvResult result;
  for (int fold = 0; fold < folds; ++fold) {
    std::vector<Eigen::Index> train_idx, val_idx;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      if (assignment[static_cast<std::size_t>(i)] == fold) val_idx.push_back(i);
      else train_idx.push_back(i);
    }
    if (val_idx.empty() || train_idx.empty()) throw DataError("cross_validate: empty fold");
    auto subset = [&](const std::vector<Eigen::Index>& idx, Eigen::MatrixXd& sx, Eigen::VectorXi& sy) {
      sx.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
      sy.resize(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t r = 0; r < idx.size(); ++r) {
        sx.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
        sy(static_cast<Eigen::Index>(r)) = labels(idx[r]);
      }
    };
    Eigen::MatrixXd tx, vx;
    Eigen::VectorXi ty, vy;
    subset(train_idx, tx, ty);
    subset(val_idx, vx, vy);
    MlpConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, 42, static_cast<std::uint64_t>(fold));
    MlpModel model = train(tx, ty, fold_config);
    result.folds.push_back(evaluate(model, vx, vy));
  }
  auto summarize = [&](auto get, double& mean, double& ci) {
    double s = 0.0;
    for (const auto& f : result.folds) s += get(f);
    mean = s / static_cast<double>(result.folds.size());
    double var = 0.0;
    for (const auto& f : result.folds) var += (get(f) - mean) * (get(f) - mean);
    var /= std::max<double>(1.0, static_cast<double>(result.folds.size()) - 1.0);
    // t(0.975, 4) for the default 5 folds; close enough for small k != 5.
    ci = 2.776 * std::sqrt(var / static_cast<double>(result.folds.size()));
  };
  summarize([](const FoldMetrics& f) { return f.auc; }, result.mean_auc, result.ci95_auc);
  summarize([](const FoldMetrics& f) { return f.f1; }, result.mean_f1, result.ci95_f1);
  return result;
}

FoldMetrics transfer_eval(const EventStore& train_store, const cohort::Cohort& train_cohort,
                          const EventStore& eval_store, const cohort::Cohort& eval_cohort,
                          const MlpConfig& config) {
  auto [space, train_data] = build_features(train_store, train_cohort);
  MlpModel model = train(train_data.features, train_data.labels, config);
  Dataset eval_data =
      features_for_users(eval_store, eval_cohort, eval_cohort.treatment_users, space);
  return evaluate(model, eval_data.features, eval_data.labels);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

}  // namespace

std::string MlpModel::to_json(const Provenance& prov) const {
  json j;
  j["provenance"] = {{"command", prov.command_line}, {"store_checksum", prov.store_checksum}};
  if (prov.seed) j["provenance"]["seed"] = *prov.seed;
  j["layers"] = {input_size(), config.hidden, config.hidden, 2};
  j["config"] = {{"hidden", config.hidden},         {"learning_rate", config.learning_rate},
                 {"epochs", config.epochs},         {"batch_size", config.batch_size},
                 {"seed", config.seed},             {"plain_mse", config.plain_mse}};
  j["w1"] = matrix_to_json(w1);
  j["w2"] = matrix_to_json(w2);
  j["w3"] = matrix_to_json(w3);
  j["b1"] = std::vector<double>(b1.data(), b1.data() + b1.size());
  j["b2"] = std::vector<double>(b2.data(), b2.data() + b2.size());
  j["b3"] = std::vector<double>(b3.data(), b3.data() + b3.size());
  return j.dump();
}

MlpModel MlpModel::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read model file: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("corrupt model file: " + path.string());
  MlpModel m;
  const json& c = j.at("config");
  m.config.hidden = c.at("hidden");
  m.config.learning_rate = c.at("learning_rate");
  m.config.epochs = c.at("epochs");
  m.config.batch_size = c.at("batch_size");
  m.config.seed = c.at("seed");
  m.config.plain_mse = c.at("plain_mse");
  m.w1 = matrix_from_json(j.at("w1"));
  m.w2 = matrix_from_json(j.at("w2"));
  m.w3 = matrix_from_json(j.at("w3"));
  auto vec = [&](const char* key) {
    std::vector<double> v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
  };
  m.b1 = vec("b1");
  m.b2 = vec("b2");
  m.b3 = vec("b3");
  return m;
}

void MlpModel::save(const std::filesystem::path& path, const Provenance& prov) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path.string());
  out << to_json(prov) << '\n';
}

}  // namespace shockkit::predictor
