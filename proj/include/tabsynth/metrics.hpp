#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabsynth/data.hpp"
#include "tabsynth/matrix.hpp"
#include "tabsynth/ml.hpp"

namespace tabsynth {

/// Code of a cell viewed categorically: the category index with missing last; for mixed
/// columns the matching point's index, then one code for "continuous", then missing.
std::size_t category_code(const ColumnSpec& spec, const Cell& cell);
/// Number of codes category_code can return for the column.
std::size_t category_slots(const ColumnSpec& spec);

// ---------------------------------------------------------------------------
// Statistical similarity

/// Jensen-Shannon divergence (base 2) between two count vectors over the same support.
double jsd(std::span<const double> p_counts, std::span<const double> q_counts);

/// Empirical 1-Wasserstein distance between two samples. With `normalize`, both are
/// min-max scaled by the range of `x` (the real sample) first.
double wasserstein_1d(std::span<const double> x, std::span<const double> y, bool normalize = false);

struct ColumnScore {
  std::string column;
  std::string metric;  // "jsd" or "wd"
  double value = 0.0;
};

struct SimilarityReport {
  std::vector<ColumnScore> columns;
  double avg_jsd = 0.0;
  double avg_wd = 0.0;
  double diff_corr = 0.0;
  bool normalized = true;

  nlohmann::json to_json() const;
};

/// Per-column JSD (categorical, missing as its own category) and WD (numeric part of
/// continuous and mixed columns), their averages, and diff_corr.
SimilarityReport similarity(const Table& real, const Table& synth, bool normalize = true);

// ---------------------------------------------------------------------------
// Associations

double pearson(std::span<const double> x, std::span<const double> y, bool* constant = nullptr);
/// Uncertainty coefficient U(x|y) = (H(x) - H(x|y)) / H(x) over integer codes.
double theil_u(std::span<const std::size_t> x, std::span<const std::size_t> y, bool* constant = nullptr);
/// Correlation ratio of numeric values grouped by category codes.
double correlation_ratio(std::span<const std::size_t> categories, std::span<const double> values,
                         bool* constant = nullptr);

struct AssociationMatrix {
  /// Entry (i, j): Pearson for numeric pairs, U(i|j) for categorical pairs and the
  /// correlation ratio for mixed-kind pairs.
  Matrix values;
  /// True where an entry was set to 0 because a column was constant.
  std::vector<std::vector<bool>> constant;

  nlohmann::json to_json() const;
};

AssociationMatrix association_matrix(const Table& t);

/// Frobenius norm of the difference of the two association matrices.
double diff_corr(const Table& real, const Table& synth);

// ---------------------------------------------------------------------------
// Distance-based privacy

struct PrivacyDistanceReport {
  double dcr_real_synth = 0.0;
  double dcr_within_real = 0.0;
  double dcr_within_synth = 0.0;
  double nndr_real_synth = 0.0;
  double nndr_within_real = 0.0;
  double nndr_within_synth = 0.0;

  nlohmann::json to_json() const;
};

/// Numeric embedding shared by two tables: numeric parts min-max scaled over their
/// combined range, categorical one-hots scaled by 1/sqrt(2).
class DistanceSpace {
 public:
  DistanceSpace(const Table& a, const Table& b);
  Matrix embed(const Table& t) const;

 private:
  struct Column {
    ColumnKind kind;
    double lo = 0.0, span = 1.0;
    std::size_t slots = 0;  // one-hot slots (categorical, or mixed indicator)
  };
  TableSchema schema_;
  std::vector<Column> cols_;
};

struct NeighborDistances {
  std::vector<double> nearest;
  std::vector<double> second;
};

/// Nearest and second-nearest Euclidean distances from each query row to `reference`.
/// With `exclude_self`, query row i skips reference row i.
NeighborDistances nearest_two(const Matrix& query, const Matrix& reference, bool exclude_self);

/// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

PrivacyDistanceReport dcr_nndr(const Table& real, const Table& synth);

// ---------------------------------------------------------------------------
// ML utility

/// Features for the utility models: numeric parts scaled by the fitting table's range
/// (plus indicator slots for mixed columns), categoricals one-hot; the target is excluded.
class FeatureEncoder {
 public:
  explicit FeatureEncoder(const Table& fit_on);
  Matrix transform(const Table& t) const;
  ml::Labels labels(const Table& t) const;
  std::size_t num_classes() const { return classes_; }

 private:
  TableSchema schema_;
  std::vector<double> lo_, span_;
  std::size_t target_ = 0;
  std::size_t classes_ = 0;
};

struct ModelScores {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double apr = 0.0;

  nlohmann::json to_json() const;
};

struct UtilityEntry {
  ml::ModelKind model;
  ModelScores real;
  ModelScores synthetic;
  ModelScores diff;  // real - synthetic
};

struct UtilityReport {
  std::vector<UtilityEntry> models;
  ModelScores mean_diff;

  nlohmann::json to_json() const;
};

ModelScores score_model(const ml::Classifier& model, const Matrix& x, const ml::Labels& y, std::size_t classes);

UtilityReport ml_utility(const Table& real_train, const Table& synth_train, const Table& test,
                         const std::vector<ml::ModelKind>& models, std::uint64_t seed);

}  // namespace tabsynth
