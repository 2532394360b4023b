#include "tabsynth/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "tabsynth/error.hpp"

namespace tabsynth {

// ---------------------------------------------------------------------------
// Long tail

double LongTailTransform::forward(double tau) const {
  if (lower_bound > 0.0) {
    if (!(tau > 0.0)) throw Error(ErrorCode::DomainError, "log of non-positive value " + format_number(tau));
    return std::log(tau);
  }
  const double arg = tau - lower_bound + epsilon;
  if (!(arg > 0.0)) throw Error(ErrorCode::DomainError, "log argument " + format_number(arg) + " is not positive");
  return std::log(arg);
}

double LongTailTransform::inverse(double compressed) const {
  if (lower_bound > 0.0) return std::exp(compressed);
  return std::exp(compressed) + lower_bound - epsilon;
}

LongTailTransform LongTailTransform::fit(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "long-tail fit on an empty column");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  return LongTailTransform{*lo, 1e-2 * (range > 0.0 ? range : 1.0)};
}

double long_tail_forward(double tau, const LongTailTransform& t) { return t.forward(tau); }
double long_tail_inverse(double compressed, const LongTailTransform& t) { return t.inverse(compressed); }

// ---------------------------------------------------------------------------
// Layout

std::size_t ColumnModel::one_hot_width() const {
  if (kind == ColumnKind::Categorical) return num_classes + (has_missing_class ? 1 : 0);
  return numeric.num_slots();
}

std::size_t square_side_for(std::size_t length) {
  auto d = static_cast<std::size_t>(std::sqrt(static_cast<double>(length)));
  while (d * d < length) ++d;
  while (d > 0 && (d - 1) * (d - 1) >= length) --d;
  return d;
}

std::size_t EncodingLayout::square_side() const { return square_side_for(width + cond_width); }
std::size_t EncodingLayout::generator_side() const { return square_side_for(width); }

const ColumnSpan& EncodingLayout::span_for_column(std::size_t schema_index) const {
  for (const auto& s : spans) {
    if (s.column == schema_index) return s;
  }
  throw Error(ErrorCode::LayoutMismatch, "no span for column " + std::to_string(schema_index));
}

nlohmann::json EncodingLayout::to_json() const {
  nlohmann::json js = nlohmann::json::array();
  for (const auto& s : spans) {
    nlohmann::json j = {{"column", s.column}, {"kind", to_string(s.kind)}};
    if (s.kind == ColumnKind::Categorical) {
      j["gamma_offset"] = s.onehot_offset;
      j["gamma_len"] = s.onehot_len;
    } else {
      j["alpha_offset"] = s.alpha_offset;
      j["beta_offset"] = s.onehot_offset;
      j["beta_len"] = s.onehot_len;
    }
    j["cond_offset"] = s.cond_offset;
    js.push_back(std::move(j));
  }
  return {{"spans", js}, {"T", width}, {"E", cond_width}, {"d", square_side()}, {"g", generator_side()}};
}

namespace {

EncodingLayout build_layout(const std::vector<ColumnModel>& models) {
  EncodingLayout layout;
  std::size_t offset = 0, cond = 0;
  for (int pass = 0; pass < 2; ++pass) {
    const bool want_categorical = pass == 1;
    for (std::size_t c = 0; c < models.size(); ++c) {
      const auto& m = models[c];
      if ((m.kind == ColumnKind::Categorical) != want_categorical) continue;
      ColumnSpan s;
      s.kind = m.kind;
      s.column = c;
      if (!want_categorical) s.alpha_offset = offset++;
      s.onehot_offset = offset;
      s.onehot_len = m.one_hot_width();
      s.cond_offset = cond;
      offset += s.onehot_len;
      cond += s.onehot_len;
      layout.spans.push_back(s);
    }
  }
  layout.width = offset;
  layout.cond_width = cond;
  return layout;
}

std::size_t argmax_segment(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// DataTransformer

DataTransformer DataTransformer::fit(const Table& table, const EncoderOptions& options) {
  if (table.empty()) throw Error(ErrorCode::EmptyInput, "cannot fit an encoder on an empty table");
  DataTransformer t;
  t.schema_ = table.schema();
  const auto& schema = t.schema_;
  t.models_.resize(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& spec = schema[c];
    auto& m = t.models_[c];
    m.kind = spec.kind;
    if (spec.kind == ColumnKind::Categorical) {
      m.num_classes = spec.categorical_values.size();
      for (const auto& row : table.rows()) {
        if (row[c].missing) {
          m.has_missing_class = true;
          break;
        }
      }
      continue;
    }
    std::vector<double> values;
    for (const auto& row : table.rows()) {
      const auto& cell = row[c];
      if (cell.missing) {
        m.numeric.has_missing_mode = true;
        continue;
      }
      const auto& pts = spec.mixed_categorical_points;
      if (std::find(pts.begin(), pts.end(), cell.value) != pts.end()) continue;
      values.push_back(cell.value);
    }
    m.numeric.categorical_points = spec.mixed_categorical_points;
    if (spec.long_tail && !values.empty()) {
      auto lt = LongTailTransform::fit(values);
      if (options.long_tail_epsilon) lt.epsilon = *options.long_tail_epsilon;
      for (double& v : values) v = lt.forward(v);
      m.long_tail = lt;
    }
    VgmOptions vo = options.vgm;
    vo.trace = nullptr;
    vo.seed = options.vgm.seed + c;
    if (values.empty()) {
      // Column made only of categorical points: keep one inert mode.
      m.numeric.vgm = VgmModel{{1.0}, {0.0}, {1.0}, {true}, vo.max_modes};
    } else {
      m.numeric.vgm = fit_vgm(values, vo);
    }
  }
  t.layout_ = build_layout(t.models_);
  return t;
}

std::vector<double> DataTransformer::encode_row(const Row& row) const {
  if (row.size() != schema_.size()) throw Error(ErrorCode::LayoutMismatch, "row width does not match the schema");
  std::vector<double> out(layout_.width, 0.0);
  for (const auto& s : layout_.spans) {
    const auto& m = models_[s.column];
    const auto& cell = row[s.column];
    if (s.kind == ColumnKind::Categorical) {
      std::size_t k;
      if (cell.missing) {
        if (!m.has_missing_class) {
          throw Error(ErrorCode::LayoutMismatch, "missing value in column '" + schema_[s.column].name +
                                                     "' which had none at fit time");
        }
        k = m.num_classes;
      } else {
        k = cell.category();
        if (k >= m.num_classes) throw Error(ErrorCode::LayoutMismatch, "category index beyond the fitted classes");
      }
      out[s.onehot_offset + k] = 1.0;
      continue;
    }
    const auto& num = m.numeric;
    const std::size_t n_vgm = num.vgm.num_active();
    if (cell.missing) {
      if (!num.has_missing_mode) {
        throw Error(ErrorCode::LayoutMismatch, "missing value in column '" + schema_[s.column].name +
                                                   "' which had none at fit time");
      }
      out[s.onehot_offset + n_vgm + num.categorical_points.size()] = 1.0;
      continue;
    }
    auto pt = std::find(num.categorical_points.begin(), num.categorical_points.end(), cell.value);
    if (pt != num.categorical_points.end()) {
      out[s.onehot_offset + n_vgm + static_cast<std::size_t>(pt - num.categorical_points.begin())] = 1.0;
      continue;
    }
    const double tau = m.long_tail ? m.long_tail->forward(cell.value) : cell.value;
    const auto code = msn_encode(tau, num.vgm);
    out[s.alpha_offset] = code.alpha;
    out[s.onehot_offset + code.mode] = 1.0;
  }
  return out;
}

Row DataTransformer::decode_row(std::span<const double> encoded) const {
  if (encoded.size() != layout_.width) throw Error(ErrorCode::LayoutMismatch, "encoded width does not match layout");
  Row row(schema_.size());
  for (const auto& s : layout_.spans) {
    const auto& m = models_[s.column];
    const std::size_t slot = argmax_segment(encoded.subspan(s.onehot_offset, s.onehot_len));
    if (s.kind == ColumnKind::Categorical) {
      row[s.column] = slot < m.num_classes ? Cell::category(slot) : Cell::absent();
      continue;
    }
    const auto& num = m.numeric;
    const std::size_t n_vgm = num.vgm.num_active();
    if (slot >= n_vgm) {
      const std::size_t p = slot - n_vgm;
      row[s.column] = p < num.categorical_points.size() ? Cell::number(num.categorical_points[p]) : Cell::absent();
      continue;
    }
    const double alpha = std::clamp(encoded[s.alpha_offset], -1.0, 1.0);
    const std::size_t k = num.vgm.active_indices()[slot];
    double tau = alpha * 4.0 * num.vgm.stds[k] + num.vgm.means[k];
    if (m.long_tail) tau = m.long_tail->inverse(tau);
    if (schema_[s.column].integral) tau = std::round(tau);
    row[s.column] = Cell::number(tau);
  }
  return row;
}

Matrix DataTransformer::encode(const Table& table) const {
  Matrix out(static_cast<Eigen::Index>(table.num_rows()), static_cast<Eigen::Index>(layout_.width));
  for (std::size_t r = 0; r < table.num_rows(); ++r) {
    const auto v = encode_row(table[r]);
    for (std::size_t j = 0; j < v.size(); ++j) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v[j];
  }
  return out;
}

Table DataTransformer::decode(const Matrix& encoded) const {
  if (static_cast<std::size_t>(encoded.cols()) != layout_.width) {
    throw Error(ErrorCode::LayoutMismatch, "encoded width does not match layout");
  }
  Table out(schema_);
  for (Eigen::Index r = 0; r < encoded.rows(); ++r) {
    out.add_row(decode_row(std::span<const double>(encoded.row(r).data(), layout_.width)));
  }
  return out;
}

nlohmann::json DataTransformer::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& m : models_) {
    nlohmann::json j = {{"kind", to_string(m.kind)}};
    if (m.kind == ColumnKind::Categorical) {
      j["num_classes"] = m.num_classes;
      j["has_missing_class"] = m.has_missing_class;
    } else {
      j["vgm"] = m.numeric.vgm.to_json();
      j["categorical_points"] = m.numeric.categorical_points;
      j["has_missing_mode"] = m.numeric.has_missing_mode;
      if (m.long_tail) j["long_tail"] = {{"lower_bound", m.long_tail->lower_bound}, {"epsilon", m.long_tail->epsilon}};
    }
    cols.push_back(std::move(j));
  }
  return {{"format", "tabsynth-encoder"}, {"version", 1}, {"schema", schema_.to_json()}, {"columns", cols},
          {"layout", layout_.to_json()}};
}

DataTransformer DataTransformer::from_json(const nlohmann::json& j) {
  try {
    DataTransformer t;
    t.schema_ = TableSchema::from_json(j.at("schema"));
    for (const auto& jc : j.at("columns")) {
      ColumnModel m;
      m.kind = column_kind_from_string(jc.at("kind").get<std::string>());
      if (m.kind == ColumnKind::Categorical) {
        m.num_classes = jc.at("num_classes").get<std::size_t>();
        m.has_missing_class = jc.at("has_missing_class").get<bool>();
      } else {
        m.numeric.vgm = VgmModel::from_json(jc.at("vgm"));
        m.numeric.categorical_points = jc.at("categorical_points").get<std::vector<double>>();
        m.numeric.has_missing_mode = jc.at("has_missing_mode").get<bool>();
        if (jc.contains("long_tail")) {
          m.long_tail = LongTailTransform{jc["long_tail"].at("lower_bound").get<double>(),
                                          jc["long_tail"].at("epsilon").get<double>()};
        }
      }
      t.models_.push_back(std::move(m));
    }
    if (t.models_.size() != t.schema_.size()) {
      throw Error(ErrorCode::LayoutMismatch, "encoder sidecar column count does not match its schema");
    }
    t.layout_ = build_layout(t.models_);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSchema, std::string("malformed encoder sidecar: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Square wrapping

Matrix square_wrap(std::span<const double> values) {
  const std::size_t d = std::max<std::size_t>(1, square_side_for(values.size()));
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
  return m;
}

std::vector<double> square_unwrap(const Matrix& square, std::size_t length) {
  if (length > static_cast<std::size_t>(square.size())) {
    throw Error(ErrorCode::LayoutMismatch, "unwrap length exceeds the square");
  }
  return std::vector<double>(square.data(), square.data() + length);
}

}  // namespace tabsynth
