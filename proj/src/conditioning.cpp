#include "tabsynth/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "tabsynth/error.hpp"

namespace tabsynth {

namespace {

std::size_t hot_slot(const Matrix& encoded, Eigen::Index row, const ColumnSpan& s) {
  Eigen::Index best = 0;
  encoded.row(row).segment(static_cast<Eigen::Index>(s.onehot_offset), static_cast<Eigen::Index>(s.onehot_len))
      .maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

}  // namespace

FreqStats FreqStats::from_encoded(const EncodingLayout& layout, const Matrix& encoded) {
  FreqStats stats;
  stats.counts.reserve(layout.spans.size());
  for (const auto& s : layout.spans) {
    std::vector<double> c(s.onehot_len, 0.0);
    for (Eigen::Index r = 0; r < encoded.rows(); ++r) c[hot_slot(encoded, r, s)] += 1.0;
    stats.counts.push_back(std::move(c));
  }
  return stats;
}

std::vector<double> FreqStats::class_pmf(std::size_t span_index, ClassWeighting weighting) const {
  const auto& c = counts.at(span_index);
  std::vector<double> p(c.size());
  double total = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double n = std::max(0.0, c[k]);
    p[k] = weighting == ClassWeighting::LogFrequency ? std::log1p(n) : n;
    total += p[k];
  }
  if (total <= 0.0) throw Error(ErrorCode::NonDistribution, "column has no positive class count");
  for (double& v : p) v /= total;
  return p;
}

nlohmann::json FreqStats::to_json() const { return {{"counts", counts}}; }

FreqStats FreqStats::from_json(const nlohmann::json& j) {
  FreqStats s;
  s.counts = j.at("counts").get<std::vector<std::vector<double>>>();
  return s;
}

CondVector build_cond_vector(const EncodingLayout& layout, std::size_t column, std::size_t cls) {
  for (std::size_t i = 0; i < layout.spans.size(); ++i) {
    const auto& s = layout.spans[i];
    if (s.column != column) continue;
    if (cls >= s.onehot_len) {
      throw Error(ErrorCode::OutOfRange, "class " + std::to_string(cls) + " outside a segment of width " +
                                             std::to_string(s.onehot_len));
    }
    CondVector cv;
    cv.bits.assign(layout.cond_width, 0.0);
    cv.bits[s.cond_offset + cls] = 1.0;
    cv.selected_column = column;
    cv.selected_class = cls;
    cv.span_index = i;
    return cv;
  }
  throw Error(ErrorCode::OutOfRange, "column " + std::to_string(column) + " is not in the layout");
}

CondVector sample_condition(const EncodingLayout& layout, const FreqStats& stats, std::mt19937_64& rng,
                            ClassWeighting weighting) {
  if (layout.spans.empty() || stats.counts.size() != layout.spans.size()) {
    throw Error(ErrorCode::OutOfRange, "frequency stats do not match the layout");
  }
  std::uniform_int_distribution<std::size_t> pick_col(0, layout.spans.size() - 1);
  const std::size_t span = pick_col(rng);
  const auto pmf = stats.class_pmf(span, weighting);
  std::discrete_distribution<std::size_t> pick_class(pmf.begin(), pmf.end());
  return build_cond_vector(layout, layout.spans[span].column, pick_class(rng));
}

double generator_cond_loss(std::span<const double> generated_row, const EncodingLayout& layout,
                           const CondVector& cond) {
  if (generated_row.size() != layout.width) throw Error(ErrorCode::LayoutMismatch, "generated row width mismatch");
  const auto& s = layout.spans.at(cond.span_index);
  const auto seg = generated_row.subspan(s.onehot_offset, s.onehot_len);
  double total = 0.0;
  for (double p : seg) {
    if (p < 0.0) throw Error(ErrorCode::NonDistribution, "negative probability in generated segment");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw Error(ErrorCode::NonDistribution, "generated segment does not sum to 1");
  return -std::log(std::max(seg[cond.selected_class], 1e-300));
}

ConditionalSampler::ConditionalSampler(const EncodingLayout& layout, const Matrix& encoded)
    : layout_(layout), stats_(FreqStats::from_encoded(layout, encoded)) {
  rows_.resize(layout.spans.size());
  for (std::size_t i = 0; i < layout.spans.size(); ++i) {
    const auto& s = layout.spans[i];
    rows_[i].resize(s.onehot_len);
    for (Eigen::Index r = 0; r < encoded.rows(); ++r) {
      rows_[i][hot_slot(encoded, r, s)].push_back(static_cast<std::size_t>(r));
    }
  }
}

CondVector ConditionalSampler::sample(std::mt19937_64& rng) const { return sample_condition(layout_, stats_, rng); }

const std::vector<std::size_t>& ConditionalSampler::rows_for(std::size_t span_index, std::size_t cls) const {
  return rows_.at(span_index).at(cls);
}

std::size_t ConditionalSampler::sample_row(const CondVector& cond, std::mt19937_64& rng) const {
  const auto& ids = rows_for(cond.span_index, cond.selected_class);
  if (ids.empty()) throw Error(ErrorCode::InvalidCondition, "no training row satisfies the condition");
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  return ids[pick(rng)];
}

}  // namespace tabsynth
