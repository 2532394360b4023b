#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "tabsynth/data.hpp"
#include "tabsynth/matrix.hpp"

namespace tabsynth {

// ---------------------------------------------------------------------------
// Gaussian mixture for one numeric column.

struct VgmModel {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<bool> active;
  std::size_t max_modes = 10;

  std::size_t num_modes() const { return weights.size(); }
  std::size_t num_active() const;
  /// Indices of active modes; position in this list is the beta slot.
  std::vector<std::size_t> active_indices() const;

  /// Mixture log-density restricted to the active modes.
  double log_likelihood(std::span<const double> values) const;

  nlohmann::json to_json() const;
  static VgmModel from_json(const nlohmann::json& j);
};

struct VgmOptions {
  std::size_t max_modes = 10;
  double weight_threshold = 0.005;
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
  /// Receives the mean log-likelihood after every EM iteration of the selected fit.
  std::vector<double>* trace = nullptr;
};

/// EM fit with k-means++ seeding. The mode count is picked by BIC over
/// 1..max_modes; modes lighter than weight_threshold are then deactivated.
VgmModel fit_vgm(std::span<const double> values, const VgmOptions& options = {});

struct MsnCode {
  double alpha = 0.0;
  std::size_t mode = 0;  // slot among active modes
};

/// Mode with the highest weighted density; ties go to the lowest index.
std::size_t select_mode(double tau, const VgmModel& m);
MsnCode msn_encode(double tau, const VgmModel& m);
/// `beta` must be an exact one-hot over the active modes.
double msn_decode(double alpha, std::span<const double> beta, const VgmModel& m);

// ---------------------------------------------------------------------------
// Log compression for long-tailed columns.

struct LongTailTransform {
  double lower_bound = 0.0;
  double epsilon = 1e-2;

  double forward(double tau) const;
  double inverse(double compressed) const;

  /// lower bound from the data, epsilon = 1e-2 * (max - min) (or 1e-2 for a constant column).
  static LongTailTransform fit(std::span<const double> values);
};

double long_tail_forward(double tau, const LongTailTransform& t);
double long_tail_inverse(double compressed, const LongTailTransform& t);

// ---------------------------------------------------------------------------
// Per-column encoders and the row layout.

struct MixedModel {
  VgmModel vgm;
  std::vector<double> categorical_points;
  /// An extra dedicated mode for missing cells, after the categorical points.
  bool has_missing_mode = false;

  std::size_t num_slots() const { return vgm.num_active() + categorical_points.size() + (has_missing_mode ? 1 : 0); }
};

struct ColumnModel {
  ColumnKind kind = ColumnKind::Continuous;
  // continuous and mixed (mixed.vgm is used for both)
  MixedModel numeric;
  std::optional<LongTailTransform> long_tail;
  // categorical
  std::size_t num_classes = 0;
  bool has_missing_class = false;

  std::size_t one_hot_width() const;
};

struct ColumnSpan {
  ColumnKind kind = ColumnKind::Continuous;
  std::size_t column = 0;        // schema index
  std::size_t alpha_offset = 0;  // continuous/mixed only
  std::size_t onehot_offset = 0; // beta or gamma
  std::size_t onehot_len = 0;
  std::size_t cond_offset = 0;   // position of the one-hot inside the conditional vector
};

struct EncodingLayout {
  std::vector<ColumnSpan> spans;  // alpha/beta columns first, then gamma columns
  std::size_t width = 0;          // T
  std::size_t cond_width = 0;     // E

  std::size_t square_side() const;     // d = ceil(sqrt(T + E))
  std::size_t generator_side() const;  // g = ceil(sqrt(T))
  const ColumnSpan& span_for_column(std::size_t schema_index) const;

  nlohmann::json to_json() const;
};

struct EncoderOptions {
  VgmOptions vgm;
  /// Overrides the default long-tail epsilon when set.
  std::optional<double> long_tail_epsilon;
};

class DataTransformer {
 public:
  DataTransformer() = default;

  static DataTransformer fit(const Table& table, const EncoderOptions& options = {});

  const TableSchema& schema() const { return schema_; }
  const EncodingLayout& layout() const { return layout_; }
  const std::vector<ColumnModel>& models() const { return models_; }

  std::vector<double> encode_row(const Row& row) const;
  Row decode_row(std::span<const double> encoded) const;

  Matrix encode(const Table& table) const;
  /// Hard decode: argmax per one-hot segment, alpha clamped to [-1, 1].
  Table decode(const Matrix& encoded) const;

  nlohmann::json to_json() const;
  static DataTransformer from_json(const nlohmann::json& j);

 private:
  TableSchema schema_;
  std::vector<ColumnModel> models_;  // indexed by schema column
  EncodingLayout layout_;
};

/// Row-major fill of the smallest square that holds the vector; zero padded.
Matrix square_wrap(std::span<const double> values);
std::vector<double> square_unwrap(const Matrix& square, std::size_t length);
std::size_t square_side_for(std::size_t length);

}  // namespace tabsynth
