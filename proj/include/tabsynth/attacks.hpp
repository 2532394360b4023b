#pragma once

// Black-box membership and attribute inference against a synthetic-data generator.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "tabsynth/data.hpp"
#include "tabsynth/gan.hpp"
#include "tabsynth/ml.hpp"
#include "tabsynth/privacy.hpp"

namespace tabsynth::attacks {

/// Draws n synthetic rows.
using Sampler = std::function<Table(std::size_t n, std::uint64_t seed)>;
/// Trains a generator on a table and returns its sampler.
using TrainFn = std::function<Sampler(const Table& train, std::uint64_t seed)>;

enum class FeatureMode { Naive, Correlation };

std::string to_string(FeatureMode m);
FeatureMode feature_mode_from_string(const std::string& s);

/// Per numeric column (mean, median, sample variance); per categorical column
/// (#distinct categories, most frequent index, least frequent index), schema order.
std::vector<double> feature_extract_naive(const Table& batch);

/// Upper triangle (row-major, i < j) of the Pearson matrix over numeric columns and
/// dummy-encoded categorical codes; constant columns contribute 0.
std::vector<double> feature_extract_corr(const Table& batch);

std::vector<double> extract_features(const Table& batch, FeatureMode mode);

struct AttackOutcome {
  double p_fake = 0.0;
  double p_real = 0.0;
  double gain = 0.0;
};

struct AttackReport {
  std::string kind;  // "membership" or "attribute"
  double p_fake = 0.0;
  double p_real = 0.0;
  double privacy_gain = 0.0;  // (p_real - p_fake) / 2, averaged over repetitions
  std::vector<AttackOutcome> repetitions;

  nlohmann::json to_json() const;
};

double privacy_gain(double p_real, double p_fake);

struct MembershipAttackConfig {
  std::size_t batches = 600;  // per generator
  std::size_t batch_rows = 400;
  FeatureMode mode = FeatureMode::Naive;
  std::size_t train_size = 1000;  // balanced attack training set
  std::size_t test_size = 200;
  ml::ForestOptions forest{50, 10, 0, 0};
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static MembershipAttackConfig from_json(const nlohmann::json& j);
};

/// Trains one generator on `reference` and one on reference + target, labels s batches
/// from each, and fits a forest to tell them apart. Throws InvalidConfig when the target
/// already occurs in `reference`, GeneratorFailure when a generator throws.
AttackOutcome membership_attack(const TrainFn& train_fn, const Table& reference, const Row& target,
                                const MembershipAttackConfig& cfg);

/// Repeats the membership attack with distinct targets: `pool` is shuffled, the first
/// `repetitions` rows become targets and the next `reference_size` rows the reference set.
AttackReport membership_audit(const TrainFn& train_fn, const Table& pool, std::size_t reference_size,
                              std::size_t repetitions, const MembershipAttackConfig& cfg);

struct AttributeAttackConfig {
  std::size_t test_size = 100;
  /// Tolerance band as a fraction of the real column's range.
  double kappa_fraction = 0.1;
  double ridge = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static AttributeAttackConfig from_json(const nlohmann::json& j);
};

/// Least-squares fit (intercept included) from encoded non-sensitive columns to the
/// sensitive one. Throws SingularDesign when the regularised normal equations fail.
class SensitiveRegressor {
 public:
  SensitiveRegressor(const Table& fit_on, std::size_t sensitive, double ridge);
  std::vector<double> predict(const Table& t) const;
  Matrix design(const Table& t) const;

 private:
  TableSchema schema_;
  std::size_t sensitive_;
  std::vector<double> lo_, span_;
  Vector coef_;
};

/// Fraction of rows whose prediction lies within kappa of the truth.
double hit_rate(const std::vector<double>& predicted, const std::vector<double>& truth, double kappa);

AttackOutcome attribute_attack(const TrainFn& train_fn, const Table& reference, std::size_t sensitive,
                               const AttributeAttackConfig& cfg);

AttackReport attribute_audit(const TrainFn& train_fn, const Table& reference, std::size_t sensitive,
                             std::size_t repetitions, const AttributeAttackConfig& cfg);

/// Generator factory backed by the GAN trainer (private when a spec is given).
TrainFn gan_train_fn(const TrainConfig& config, std::optional<privacy::PrivacySpec> spec = std::nullopt);

}  // namespace tabsynth::attacks
