#pragma once

// Small supervised learners used for ML-utility scores and inference attacks.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tabsynth/matrix.hpp"

namespace tabsynth::ml {

using Labels = std::vector<std::size_t>;

class Classifier {
 public:
  virtual ~Classifier() = default;
  /// Throws SingleClassTrainingSet when `y` holds one class only.
  virtual void fit(const Matrix& x, const Labels& y, std::size_t num_classes) = 0;
  /// Rows x num_classes class probabilities.
  virtual Matrix predict_proba(const Matrix& x) const = 0;
  Labels predict(const Matrix& x) const;
};

struct TreeOptions {
  std::size_t max_depth = 28;
  std::size_t min_samples_split = 2;
  /// Features tried per split; 0 means all.
  std::size_t max_features = 0;
  std::uint64_t seed = 0;
};

/// CART with Gini impurity; leaves store class frequencies.
class DecisionTree : public Classifier {
 public:
  explicit DecisionTree(TreeOptions options = {}) : opt_(options) {}
  void fit(const Matrix& x, const Labels& y, std::size_t num_classes) override;
  Matrix predict_proba(const Matrix& x) const override;
  /// Fits on a subset of rows (with repetition allowed).
  void fit_rows(const Matrix& x, const Labels& y, std::size_t num_classes, std::vector<std::size_t> rows);
  std::size_t depth() const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::size_t left = 0, right = 0;
    std::vector<double> proba;
  };
  std::size_t build(const Matrix& x, const Labels& y, std::vector<std::size_t>& rows, std::size_t begin,
                    std::size_t end, std::size_t depth, std::mt19937_64& rng);
  std::size_t depth_of(std::size_t node) const;

  TreeOptions opt_;
  std::size_t classes_ = 0;
  std::vector<Node> nodes_;
};

struct ForestOptions {
  std::size_t trees = 20;
  std::size_t max_depth = 28;
  /// 0 means floor(sqrt(features)), at least 1.
  std::size_t max_features = 0;
  std::uint64_t seed = 0;
};

/// Bootstrap-aggregated trees with per-split feature bagging.
class RandomForest : public Classifier {
 public:
  explicit RandomForest(ForestOptions options = {}) : opt_(options) {}
  void fit(const Matrix& x, const Labels& y, std::size_t num_classes) override;
  Matrix predict_proba(const Matrix& x) const override;

 private:
  ForestOptions opt_;
  std::vector<DecisionTree> trees_;
  std::size_t classes_ = 0;
};

struct LogisticOptions {
  std::size_t iterations = 500;
  double lr = 0.1;
  double l2 = 1e-4;
};

/// Multinomial logistic regression by full-batch Adam on the mean log-loss.
class LogisticRegression : public Classifier {
 public:
  explicit LogisticRegression(LogisticOptions options = {}) : opt_(options) {}
  void fit(const Matrix& x, const Labels& y, std::size_t num_classes) override;
  Matrix predict_proba(const Matrix& x) const override;

 private:
  LogisticOptions opt_;
  Matrix w_;
  Eigen::RowVectorXd b_;
};

struct MlpOptions {
  std::size_t hidden = 128;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// One ReLU hidden layer, softmax output, minibatch Adam.
class Mlp : public Classifier {
 public:
  explicit Mlp(MlpOptions options = {}) : opt_(options) {}
  void fit(const Matrix& x, const Labels& y, std::size_t num_classes) override;
  Matrix predict_proba(const Matrix& x) const override;
  std::size_t hidden_units() const { return static_cast<std::size_t>(w1_.cols()); }

 private:
  MlpOptions opt_;
  Matrix w1_, w2_;
  Eigen::RowVectorXd b1_, b2_;
};

enum class ModelKind { DecisionTree, RandomForest, LogisticRegression, Mlp };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);
std::unique_ptr<Classifier> make_classifier(ModelKind kind, std::uint64_t seed);

Matrix softmax_rows(const Matrix& logits);

// ---------------------------------------------------------------------------
// Scores

double accuracy(const Labels& truth, const Labels& pred);
/// Unweighted mean of per-class F1 over classes present in truth or prediction.
double macro_f1(const Labels& truth, const Labels& pred, std::size_t num_classes);
/// Area under the ROC curve of binary labels (ties share ranks).
double binary_auc(const std::vector<bool>& positive, const std::vector<double>& score);
/// Step-wise average precision of binary labels.
double average_precision(const std::vector<bool>& positive, const std::vector<double>& score);
/// One-vs-rest macro averages over classes present in truth; the binary case scores class 1.
double roc_auc(const Labels& truth, const Matrix& proba);
double average_precision(const Labels& truth, const Matrix& proba);

}  // namespace tabsynth::ml
