#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shockkit/cohort.hpp"
#include "shockkit/event_store.hpp"

namespace shockkit::predictor {

/// Feature windows: records per vocabulary subreddit over the 6 months
/// before the event.
inline constexpr std::int64_t kFeatureWindowSeconds = 182 * kSecondsPerDay;

struct FeatureSpace {
  std::vector<std::string> vocabulary;  // sorted, duplicate-free
};

struct Dataset {
  std::vector<std::string> users;
  Eigen::MatrixXd features;  // users x vocabulary, ln(1+count)
  Eigen::VectorXi labels;    // 1 = leave (inactive at grace 4), 0 = stay
};

/// Vocabulary = every subreddit any treatment user touched in the feature
/// window; labels from platform-wide inactivity after a 4-week grace.
std::pair<FeatureSpace, Dataset> build_features(const EventStore& store, const cohort::Cohort& cohort,
                                                int grace_weeks = 4);

/// Features for arbitrary users against a fixed vocabulary (transfer path):
/// subreddits outside the vocabulary contribute nothing.
Dataset features_for_users(const EventStore& store, const cohort::Cohort& cohort,
                           const std::vector<std::string>& users, const FeatureSpace& space,
                           int grace_weeks = 4);

struct MlpConfig {
  int hidden = 64;
  double learning_rate = 0.01;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 1;
  bool plain_mse = false;  // swap the log-transformed loss for plain MSE
};

/// [m, H, H, 2] network; rectifier hidden units, sigmoid outputs.
/// Output node 0 scores "stay", node 1 scores "leave".
struct MlpModel {
  MlpConfig config;
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2, b3;

  int input_size() const { return static_cast<int>(w1.cols()); }

  /// Batch forward pass; rows are samples, two output columns in (0,1).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  std::string to_json(const Provenance& prov) const;
  static MlpModel from_json_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path, const Provenance& prov) const;
};

/// Loss: mean over samples of sum over the two output nodes of
/// (ln(1+o) - ln(1+target))^2 with one-hot targets (plain squared error when
/// configured). Returns the loss; fills parameter gradients when not null.
double loss_and_gradients(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                          MlpModel* gradients);

/// Seeded mini-batch gradient descent. Throws on single-class data.
MlpModel train(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels, const MlpConfig& config);

struct Prediction {
  double score = 0.5;  // leave / (leave + stay), ranking score
  int label = 0;       // argmax; exact tie -> stay (0)
};

Prediction predict(const MlpModel& model, const Eigen::VectorXd& x);

/// Mann-Whitney AUC with half credit for score ties; `labels` nonzero = positive.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// F1 on the positive (leave) class.
double f1(const std::vector<int>& predicted, const std::vector<int>& labels);

struct FoldMetrics {
  double auc = 0.0;
  double f1 = 0.0;
};

struct CvResult {
  std::vector<FoldMetrics> folds;
  double mean_auc = 0.0;
  double ci95_auc = 0.0;  // t-based half width over folds
  double mean_f1 = 0.0;
  double ci95_f1 = 0.0;
};

/// Seeded stratified k-fold CV; every example lands in exactly one
/// validation fold.
std::vector<int> stratified_folds(const Eigen::VectorXi& labels, int folds, std::uint64_t seed);

CvResult cross_validate(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels, int folds,
                        const MlpConfig& config);

FoldMetrics evaluate(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXi& labels);

/// Train on one cohort, evaluate on another; eval features are computed
/// against the training vocabulary by subreddit name.
FoldMetrics transfer_eval(const EventStore& train_store, const cohort::Cohort& train_cohort,
                          const EventStore& eval_store, const cohort::Cohort& eval_cohort,
                          const MlpConfig& config);

}  // namespace shockkit::predictor
