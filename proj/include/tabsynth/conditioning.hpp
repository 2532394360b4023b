#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "tabsynth/encoder.hpp"
#include "tabsynth/matrix.hpp"

namespace tabsynth {

/// One-hot condition over the concatenated beta/gamma segments (ex_cond).
struct CondVector {
  std::vector<double> bits;
  std::size_t selected_column = 0;  // schema index
  std::size_t selected_class = 0;   // index inside that column's one-hot segment
  std::size_t span_index = 0;       // index into EncodingLayout::spans
};

enum class ClassWeighting {
  LogFrequency,  // log(1 + count), oversamples minorities during training
  Empirical,     // count, reproduces the data's marginals when sampling
};

/// Per conditionable column (one per layout span): class or mode counts.
struct FreqStats {
  std::vector<std::vector<double>> counts;

  /// Counts the hot slot of every segment of an encoded table.
  static FreqStats from_encoded(const EncodingLayout& layout, const Matrix& encoded);
  /// PMF over classes of one span: log(1 + count), normalized.
  std::vector<double> class_pmf(std::size_t span_index, ClassWeighting weighting = ClassWeighting::LogFrequency) const;

  nlohmann::json to_json() const;
  static FreqStats from_json(const nlohmann::json& j);
};

CondVector build_cond_vector(const EncodingLayout& layout, std::size_t column, std::size_t cls);

/// Training-by-sampling: uniform column, log-frequency class.
CondVector sample_condition(const EncodingLayout& layout, const FreqStats& stats, std::mt19937_64& rng,
                            ClassWeighting weighting = ClassWeighting::LogFrequency);

/// Cross-entropy between the condition and the generated segment of the selected column.
/// `generated_row` is a full encoded row (width T) whose one-hot segments hold probabilities.
double generator_cond_loss(std::span<const double> generated_row, const EncodingLayout& layout,
                           const CondVector& cond);

/// Condition sampler bound to a training set: remembers which rows satisfy each condition.
class ConditionalSampler {
 public:
  ConditionalSampler(const EncodingLayout& layout, const Matrix& encoded);

  const FreqStats& stats() const { return stats_; }
  CondVector sample(std::mt19937_64& rng) const;
  /// Uniform draw (with replacement) among training rows that satisfy `cond`.
  std::size_t sample_row(const CondVector& cond, std::mt19937_64& rng) const;
  const std::vector<std::size_t>& rows_for(std::size_t span_index, std::size_t cls) const;

 private:
  EncodingLayout layout_;
  FreqStats stats_;
  std::vector<std::vector<std::vector<std::size_t>>> rows_;  // [span][class] -> row ids
};

}  // namespace tabsynth
