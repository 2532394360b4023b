#include "tabsynth/ml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tabsynth/error.hpp"

namespace tabsynth::ml {

namespace {

void check_training_set(const Matrix& x, const Labels& y, std::size_t num_classes) {
  if (static_cast<std::size_t>(x.rows()) != y.size() || y.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "features and labels differ in length");
  }
  std::vector<bool> seen(num_classes, false);
  std::size_t distinct = 0;
  for (auto c : y) {
    if (c >= num_classes) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(c) + " out of range");
    if (!seen[c]) {
      seen[c] = true;
      ++distinct;
    }
  }
  if (distinct < 2) throw Error(ErrorCode::SingleClassTrainingSet, "training labels hold a single class");
}

Matrix one_hot(const Labels& y, std::size_t k) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < y.size(); ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y[i])) = 1.0;
  return m;
}

struct AdamState {
  Matrix m, v;
  void init(Eigen::Index r, Eigen::Index c) {
    m = Matrix::Zero(r, c);
    v = Matrix::Zero(r, c);
  }
  void step(Matrix& w, const Matrix& g, double lr, long t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace

Labels Classifier::predict(const Matrix& x) const {
  const Matrix p = predict_proba(x);
  Labels out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Eigen::Index k = 0;
    p.row(r).maxCoeff(&k);
    out[static_cast<std::size_t>(r)] = static_cast<std::size_t>(k);
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto e = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decision tree

void DecisionTree::fit(const Matrix& x, const Labels& y, std::size_t num_classes) {
  check_training_set(x, y, num_classes);
  std::vector<std::size_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  fit_rows(x, y, num_classes, std::move(rows));
}

void DecisionTree::fit_rows(const Matrix& x, const Labels& y, std::size_t num_classes, std::vector<std::size_t> rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "decision tree needs at least one row");
  classes_ = num_classes;
  nodes_.clear();
  std::mt19937_64 rng(opt_.seed);
  build(x, y, rows, 0, rows.size(), 0, rng);
}

std::size_t DecisionTree::build(const Matrix& x, const Labels& y, std::vector<std::size_t>& rows, std::size_t begin,
                                std::size_t end, std::size_t depth, std::mt19937_64& rng) {
  const std::size_t n = end - begin;
  std::vector<double> counts(classes_, 0.0);
  for (std::size_t i = begin; i < end; ++i) counts[y[rows[i]]] += 1.0;
  const std::size_t id = nodes_.size();
  nodes_.push_back({});
  nodes_[id].proba = counts;
  for (double& p : nodes_[id].proba) p /= static_cast<double>(n);

  const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }) <= 1;
  if (pure || depth >= opt_.max_depth || n < std::max<std::size_t>(2, opt_.min_samples_split)) return id;

  const auto d = static_cast<std::size_t>(x.cols());
  std::vector<std::size_t> features(d);
  std::iota(features.begin(), features.end(), 0);
  std::size_t tries = d;
  if (opt_.max_features > 0 && opt_.max_features < d) {
    std::shuffle(features.begin(), features.end(), rng);
    tries = opt_.max_features;
  }

  double best_score = std::numeric_limits<double>::infinity();
  int best_feature = -1;
  double best_threshold = 0.0;
  std::vector<std::pair<double, std::size_t>> vals(n);
  std::vector<double> left(classes_);
  // Features past `tries` are examined only while no split has been found.
  for (std::size_t fi = 0; fi < d; ++fi) {
    if (fi >= tries && best_feature >= 0) break;
    const std::size_t f = features[fi];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = rows[begin + i];
      vals[i] = {x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)), y[r]};
    }
    std::sort(vals.begin(), vals.end());
    if (vals.front().first == vals.back().first) continue;
    std::fill(left.begin(), left.end(), 0.0);
    double left_sq = 0.0;
    double right_sq = 0.0;
    for (double c : counts) right_sq += c * c;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const std::size_t c = vals[i].second;
      const double lc = left[c];
      const double rc = counts[c] - lc;
      left_sq += 2.0 * lc + 1.0;
      right_sq += -2.0 * rc + 1.0;
      left[c] = lc + 1.0;
      if (vals[i].first == vals[i + 1].first) continue;
      const double nl = static_cast<double>(i + 1);
      const double nr = static_cast<double>(n - i - 1);
      // weighted Gini = nl * (1 - sum l^2/nl^2) + nr * (1 - sum r^2/nr^2), up to the constant n
      const double score = -(left_sq / nl + right_sq / nr);
      if (score < best_score - 1e-12) {
        best_score = score;
        best_feature = static_cast<int>(f);
        best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
      }
    }
  }
  if (best_feature < 0) return id;

  const auto mid_it = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                     rows.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t r) {
                                       return x(static_cast<Eigen::Index>(r), best_feature) <= best_threshold;
                                     });
  const auto mid = static_cast<std::size_t>(mid_it - rows.begin());
  nodes_[id].feature = best_feature;
  nodes_[id].threshold = best_threshold;
  const std::size_t l = build(x, y, rows, begin, mid, depth + 1, rng);
  const std::size_t r = build(x, y, rows, mid, end, depth + 1, rng);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

Matrix DecisionTree::predict_proba(const Matrix& x) const {
  if (nodes_.empty()) throw Error(ErrorCode::InvalidConfig, "decision tree is not fitted");
  Matrix out(x.rows(), static_cast<Eigen::Index>(classes_));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::size_t node = 0;
    while (nodes_[node].feature >= 0) {
      node = x(r, nodes_[node].feature) <= nodes_[node].threshold ? nodes_[node].left : nodes_[node].right;
    }
    for (std::size_t k = 0; k < classes_; ++k) out(r, static_cast<Eigen::Index>(k)) = nodes_[node].proba[k];
  }
  return out;
}

std::size_t DecisionTree::depth_of(std::size_t node) const {
  if (nodes_[node].feature < 0) return 0;
  return 1 + std::max(depth_of(nodes_[node].left), depth_of(nodes_[node].right));
}

std::size_t DecisionTree::depth() const { return nodes_.empty() ? 0 : depth_of(0); }

// ---------------------------------------------------------------------------
// Random forest

void RandomForest::fit(const Matrix& x, const Labels& y, std::size_t num_classes) {
  check_training_set(x, y, num_classes);
  classes_ = num_classes;
  trees_.clear();
  std::mt19937_64 rng(opt_.seed);
  const std::size_t d = static_cast<std::size_t>(x.cols());
  const std::size_t mf =
      opt_.max_features > 0 ? opt_.max_features
                            : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d))));
  std::uniform_int_distribution<std::size_t> pick(0, y.size() - 1);
  for (std::size_t t = 0; t < opt_.trees; ++t) {
    std::vector<std::size_t> rows(y.size());
    for (auto& r : rows) r = pick(rng);
    TreeOptions to;
    to.max_depth = opt_.max_depth;
    to.max_features = mf;
    to.seed = rng();
    DecisionTree tree(to);
    tree.fit_rows(x, y, num_classes, std::move(rows));
    trees_.push_back(std::move(tree));
  }
}

Matrix RandomForest::predict_proba(const Matrix& x) const {
  if (trees_.empty()) throw Error(ErrorCode::InvalidConfig, "random forest is not fitted");
  Matrix out = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(classes_));
  for (const auto& t : trees_) out += t.predict_proba(x);
  return out / static_cast<double>(trees_.size());
}

// ---------------------------------------------------------------------------
// Logistic regression

void LogisticRegression::fit(const Matrix& x, const Labels& y, std::size_t num_classes) {
  check_training_set(x, y, num_classes);
  const auto k = static_cast<Eigen::Index>(num_classes);
  w_ = Matrix::Zero(x.cols(), k);
  b_ = Eigen::RowVectorXd::Zero(k);
  const Matrix target = one_hot(y, num_classes);
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  AdamState sw, sb;
  sw.init(w_.rows(), w_.cols());
  sb.init(1, k);
  Matrix b(1, k);
  b.row(0) = b_;
  for (std::size_t it = 1; it <= opt_.iterations; ++it) {
    Matrix logits = x * w_;
    logits.rowwise() += b.row(0);
    const Matrix delta = (softmax_rows(logits) - target) * inv_n;
    const Matrix gw = x.transpose() * delta + opt_.l2 * w_;
    const Matrix gb = delta.colwise().sum();
    sw.step(w_, gw, opt_.lr, static_cast<long>(it));
    sb.step(b, gb, opt_.lr, static_cast<long>(it));
  }
  b_ = b.row(0);
}

Matrix LogisticRegression::predict_proba(const Matrix& x) const {
  Matrix logits = x * w_;
  logits.rowwise() += b_;
  return softmax_rows(logits);
}

// ---------------------------------------------------------------------------
// MLP

void Mlp::fit(const Matrix& x, const Labels& y, std::size_t num_classes) {
  check_training_set(x, y, num_classes);
  std::mt19937_64 rng(opt_.seed);
  const auto d = x.cols();
  const auto h = static_cast<Eigen::Index>(opt_.hidden);
  const auto k = static_cast<Eigen::Index>(num_classes);
  std::normal_distribution<double> g(0.0, 1.0);
  w1_.resize(d, h);
  for (Eigen::Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = g(rng) * std::sqrt(2.0 / static_cast<double>(d));
  w2_.resize(h, k);
  for (Eigen::Index i = 0; i < w2_.size(); ++i) w2_.data()[i] = g(rng) * std::sqrt(1.0 / static_cast<double>(h));
  Matrix b1 = Matrix::Zero(1, h), b2 = Matrix::Zero(1, k);
  AdamState s1, s2, sb1, sb2;
  s1.init(d, h);
  s2.init(h, k);
  sb1.init(1, h);
  sb2.init(1, k);
  const Matrix target = one_hot(y, num_classes);
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  long t = 0;
  for (std::size_t epoch = 0; epoch < opt_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt_.batch_size) {
      const std::size_t m = std::min(opt_.batch_size, order.size() - start);
      Matrix xb(static_cast<Eigen::Index>(m), d), yb(static_cast<Eigen::Index>(m), k);
      for (std::size_t i = 0; i < m; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(order[start + i]));
        yb.row(static_cast<Eigen::Index>(i)) = target.row(static_cast<Eigen::Index>(order[start + i]));
      }
      Matrix pre = xb * w1_;
      pre.rowwise() += b1.row(0);
      const Matrix act = pre.cwiseMax(0.0);
      Matrix logits = act * w2_;
      logits.rowwise() += b2.row(0);
      const Matrix delta = (softmax_rows(logits) - yb) / static_cast<double>(m);
      const Matrix gw2 = act.transpose() * delta;
      const Matrix gb2 = delta.colwise().sum();
      const Matrix dact = (delta * w2_.transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
      const Matrix gw1 = xb.transpose() * dact;
      const Matrix gb1 = dact.colwise().sum();
      ++t;
      s1.step(w1_, gw1, opt_.lr, t);
      s2.step(w2_, gw2, opt_.lr, t);
      sb1.step(b1, gb1, opt_.lr, t);
      sb2.step(b2, gb2, opt_.lr, t);
    }
  }
  b1_ = b1.row(0);
  b2_ = b2.row(0);
}

Matrix Mlp::predict_proba(const Matrix& x) const {
  Matrix pre = x * w1_;
  pre.rowwise() += b1_;
  Matrix logits = pre.cwiseMax(0.0) * w2_;
  logits.rowwise() += b2_;
  return softmax_rows(logits);
}

// ---------------------------------------------------------------------------
// Factory

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::DecisionTree: return "decision_tree";
    case ModelKind::RandomForest: return "random_forest";
    case ModelKind::LogisticRegression: return "logistic_regression";
    case ModelKind::Mlp: return "mlp";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (auto k : {ModelKind::DecisionTree, ModelKind::RandomForest, ModelKind::LogisticRegression, ModelKind::Mlp}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown model '" + s + "'");
}

std::unique_ptr<Classifier> make_classifier(ModelKind kind, std::uint64_t seed) {
  switch (kind) {
    case ModelKind::DecisionTree: {
      TreeOptions o;
      o.seed = seed;
      return std::make_unique<DecisionTree>(o);
    }
    case ModelKind::RandomForest: {
      ForestOptions o;
      o.seed = seed;
      return std::make_unique<RandomForest>(o);
    }
    case ModelKind::LogisticRegression: return std::make_unique<LogisticRegression>();
    case ModelKind::Mlp: {
      MlpOptions o;
      o.seed = seed;
      return std::make_unique<Mlp>(o);
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown model kind");
}

// ---------------------------------------------------------------------------
// Scores

double accuracy(const Labels& truth, const Labels& pred) {
  if (truth.size() != pred.size() || truth.empty()) throw Error(ErrorCode::ShapeMismatch, "accuracy: length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double macro_f1(const Labels& truth, const Labels& pred, std::size_t num_classes) {
  if (truth.size() != pred.size() || truth.empty()) throw Error(ErrorCode::ShapeMismatch, "macro_f1: length mismatch");
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) {
      tp[truth[i]] += 1.0;
    } else {
      fp[pred[i]] += 1.0;
      fn[truth[i]] += 1.0;
    }
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (tp[k] + fp[k] + fn[k] == 0.0) continue;
    total += 2.0 * tp[k] / (2.0 * tp[k] + fp[k] + fn[k]);
    ++used;
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

double binary_auc(const std::vector<bool>& positive, const std::vector<double>& score) {
  const std::size_t n = positive.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  double rank_sum = 0.0;
  double pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && score[idx[j]] == score[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (positive[idx[t]]) {
        rank_sum += avg_rank;
        pos += 1.0;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double average_precision(const std::vector<bool>& positive, const std::vector<double>& score) {
  const std::size_t n = positive.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  const double total_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  if (total_pos == 0.0) return std::numeric_limits<double>::quiet_NaN();
  double tp = 0.0, seen = 0.0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && score[idx[j]] == score[idx[i]]) {
      tp += positive[idx[j]] ? 1.0 : 0.0;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

namespace {

template <class Fn>
double one_vs_rest(const Labels& truth, const Matrix& proba, Fn&& fn) {
  const auto k = static_cast<std::size_t>(proba.cols());
  std::vector<double> score(truth.size());
  std::vector<bool> pos(truth.size());
  auto column = [&](std::size_t c) {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      score[i] = proba(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      pos[i] = truth[i] == c;
    }
    return fn(pos, score);
  };
  if (k == 2) return column(1);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double v = column(c);
    if (std::isnan(v)) continue;
    total += v;
    ++used;
  }
  return used ? total / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double roc_auc(const Labels& truth, const Matrix& proba) {
  return one_vs_rest(truth, proba, [](const auto& p, const auto& s) { return binary_auc(p, s); });
}

double average_precision(const Labels& truth, const Matrix& proba) {
  return one_vs_rest(truth, proba, [](const auto& p, const auto& s) { return average_precision(p, s); });
}

}  // namespace tabsynth::ml
