#include "tabsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "tabsynth/error.hpp"

namespace tabsynth {

namespace {

void require_same_schema(const Table& a, const Table& b) {
  const auto& sa = a.schema();
  const auto& sb = b.schema();
  bool same = sa.size() == sb.size();
  for (std::size_t c = 0; same && c < sa.size(); ++c) {
    same = sa[c].name == sb[c].name && sa[c].kind == sb[c].kind &&
           sa[c].categorical_values == sb[c].categorical_values &&
           sa[c].mixed_categorical_points == sb[c].mixed_categorical_points;
  }
  if (!same) throw Error(ErrorCode::SchemaMismatch, "tables do not share a schema");
}

bool numeric_kind(ColumnKind k) { return k != ColumnKind::Categorical; }

double entropy_of(const std::map<std::size_t, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [k, c] : counts) {
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

}  // namespace

std::size_t category_code(const ColumnSpec& spec, const Cell& cell) {
  if (spec.kind == ColumnKind::Categorical) return cell.missing ? spec.categorical_values.size() : cell.category();
  const auto& pts = spec.mixed_categorical_points;
  if (cell.missing) return pts.size() + 1;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (cell.value == pts[k]) return k;
  }
  return pts.size();
}

std::size_t category_slots(const ColumnSpec& spec) {
  return spec.kind == ColumnKind::Categorical ? spec.categorical_values.size() + 1
                                              : spec.mixed_categorical_points.size() + 2;
}

// ---------------------------------------------------------------------------
// Statistical similarity

double jsd(std::span<const double> p_counts, std::span<const double> q_counts) {
  if (p_counts.size() != q_counts.size()) throw Error(ErrorCode::ShapeMismatch, "jsd: supports differ in size");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p_counts.size(); ++i) {
    if (p_counts[i] < 0.0 || q_counts[i] < 0.0) throw Error(ErrorCode::DomainError, "jsd: negative count");
    sp += p_counts[i];
    sq += q_counts[i];
  }
  if (!(sp > 0.0) || !(sq > 0.0)) throw Error(ErrorCode::EmptyDistribution, "jsd: a distribution has no mass");
  double total = 0.0;
  for (std::size_t i = 0; i < p_counts.size(); ++i) {
    const double p = p_counts[i] / sp;
    const double q = q_counts[i] / sq;
    const double m = 0.5 * (p + q);
    const double tp = p > 0.0 ? 0.5 * p * std::log2(p / m) : 0.0;
    const double tq = q > 0.0 ? 0.5 * q * std::log2(q / m) : 0.0;
    // One addition per bin keeps jsd(p, q) and jsd(q, p) bitwise equal.
    total += tp + tq;
  }
  return std::clamp(total, 0.0, 1.0);
}

double wasserstein_1d(std::span<const double> x, std::span<const double> y, bool normalize) {
  if (x.empty() || y.empty()) throw Error(ErrorCode::EmptyInput, "wasserstein_1d: empty sample");
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> b(y.begin(), y.end());
  if (normalize) {
    const auto [lo_it, hi_it] = std::minmax_element(a.begin(), a.end());
    const double lo = *lo_it;
    const double span = *hi_it - lo > 0.0 ? *hi_it - lo : 1.0;
    for (double& v : a) v = (v - lo) / span;
    for (double& v : b) v = (v - lo) / span;
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> grid(a);
  grid.insert(grid.end(), b.begin(), b.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t ia = 0, ib = 0;
  double w = 0.0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    while (ia < a.size() && a[ia] <= grid[k]) ++ia;
    while (ib < b.size() && b[ib] <= grid[k]) ++ib;
    w += std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb) * (grid[k + 1] - grid[k]);
  }
  return w;
}

nlohmann::json SimilarityReport::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns) cols.push_back({{"column", c.column}, {"metric", c.metric}, {"value", c.value}});
  return {{"columns", cols},
          {"avg_jsd", avg_jsd},
          {"avg_wd", avg_wd},
          {"diff_corr", diff_corr},
          {"normalized", normalized}};
}

SimilarityReport similarity(const Table& real, const Table& synth, bool normalize) {
  require_same_schema(real, synth);
  SimilarityReport rep;
  rep.normalized = normalize;
  const auto& schema = real.schema();
  double jsd_sum = 0.0, wd_sum = 0.0;
  std::size_t n_jsd = 0, n_wd = 0;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& spec = schema[c];
    if (spec.kind == ColumnKind::Categorical) {
      std::vector<double> p(category_slots(spec), 0.0), q(category_slots(spec), 0.0);
      for (const auto& r : real.rows()) p[category_code(spec, r[c])] += 1.0;
      for (const auto& r : synth.rows()) q[category_code(spec, r[c])] += 1.0;
      const double v = jsd(p, q);
      rep.columns.push_back({spec.name, "jsd", v});
      jsd_sum += v;
      ++n_jsd;
    } else {
      const double v = wasserstein_1d(real.numeric_column(c), synth.numeric_column(c), normalize);
      rep.columns.push_back({spec.name, "wd", v});
      wd_sum += v;
      ++n_wd;
    }
  }
  rep.avg_jsd = n_jsd ? jsd_sum / static_cast<double>(n_jsd) : 0.0;
  rep.avg_wd = n_wd ? wd_sum / static_cast<double>(n_wd) : 0.0;
  rep.diff_corr = diff_corr(real, synth);
  return rep;
}

// ---------------------------------------------------------------------------
// Associations

double pearson(std::span<const double> x, std::span<const double> y, bool* constant) {
  if (x.size() != y.size()) throw Error(ErrorCode::ShapeMismatch, "pearson: length mismatch");
  if (constant) *constant = false;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    if (constant) *constant = true;
    return 0.0;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double theil_u(std::span<const std::size_t> x, std::span<const std::size_t> y, bool* constant) {
  if (x.size() != y.size()) throw Error(ErrorCode::ShapeMismatch, "theil_u: length mismatch");
  if (constant) *constant = false;
  const double n = static_cast<double>(x.size());
  std::map<std::size_t, double> cx, cy;
  std::map<std::pair<std::size_t, std::size_t>, double> cxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cx[x[i]] += 1.0;
    cy[y[i]] += 1.0;
    cxy[{x[i], y[i]}] += 1.0;
  }
  const double hx = entropy_of(cx, n);
  if (!(hx > 0.0)) {
    if (constant) *constant = true;
    return 0.0;
  }
  double h_x_given_y = 0.0;
  for (const auto& [k, c] : cxy) h_x_given_y -= (c / n) * std::log(c / cy[k.second]);
  return std::clamp((hx - h_x_given_y) / hx, 0.0, 1.0);
}

double correlation_ratio(std::span<const std::size_t> categories, std::span<const double> values, bool* constant) {
  if (categories.size() != values.size()) throw Error(ErrorCode::ShapeMismatch, "correlation_ratio: length mismatch");
  if (constant) *constant = false;
  std::map<std::size_t, std::pair<double, double>> groups;  // sum, count
  double mean = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& g = groups[categories[i]];
    g.first += values[i];
    g.second += 1.0;
    mean += values[i];
  }
  mean /= static_cast<double>(values.size());
  double between = 0.0, total = 0.0;
  for (const auto& [k, g] : groups) between += g.second * std::pow(g.first / g.second - mean, 2.0);
  for (double v : values) total += (v - mean) * (v - mean);
  if (!(total > 0.0)) {
    if (constant) *constant = true;
    return 0.0;
  }
  return std::clamp(std::sqrt(between / total), 0.0, 1.0);
}

nlohmann::json AssociationMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    rows.push_back(std::vector<double>(values.row(i).data(), values.row(i).data() + values.cols()));
  }
  return {{"values", rows}, {"constant", constant}};
}

AssociationMatrix association_matrix(const Table& t) {
  if (t.num_rows() < 2) throw Error(ErrorCode::TooFewRows, "association matrix needs at least 2 rows");
  const auto& schema = t.schema();
  const std::size_t m = schema.size();
  AssociationMatrix out;
  out.values = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  out.constant.assign(m, std::vector<bool>(m, false));

  std::vector<std::vector<std::size_t>> codes(m);
  for (std::size_t c = 0; c < m; ++c) {
    codes[c].reserve(t.num_rows());
    for (const auto& r : t.rows()) codes[c].push_back(category_code(schema[c], r[c]));
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto& si = schema[i];
      const auto& sj = schema[j];
      bool flag = false;
      double v = 0.0;
      const bool ni = numeric_kind(si.kind), nj = numeric_kind(sj.kind);
      if (ni && nj) {
        std::vector<double> x, y;
        for (const auto& r : t.rows()) {
          if (r[i].missing || r[j].missing) continue;
          x.push_back(r[i].value);
          y.push_back(r[j].value);
        }
        v = x.size() < 2 ? (flag = true, 0.0) : pearson(x, y, &flag);
      } else if (!ni && !nj) {
        v = theil_u(codes[i], codes[j], &flag);
      } else if (si.kind == ColumnKind::Mixed || sj.kind == ColumnKind::Mixed) {
        // mixed against categorical: the mixed column is viewed through its point indicator
        v = theil_u(codes[i], codes[j], &flag);
      } else {
        const std::size_t cat = ni ? j : i;
        const std::size_t num = ni ? i : j;
        std::vector<std::size_t> k;
        std::vector<double> x;
        for (std::size_t r = 0; r < t.num_rows(); ++r) {
          if (t.at(r, num).missing) continue;
          k.push_back(codes[cat][r]);
          x.push_back(t.at(r, num).value);
        }
        v = x.empty() ? (flag = true, 0.0) : correlation_ratio(k, x, &flag);
      }
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      out.constant[i][j] = flag;
    }
  }
  return out;
}

double diff_corr(const Table& real, const Table& synth) {
  require_same_schema(real, synth);
  return (association_matrix(real).values - association_matrix(synth).values).norm();
}

// ---------------------------------------------------------------------------
// Distance-based privacy

nlohmann::json PrivacyDistanceReport::to_json() const {
  return {{"dcr_real_synth", dcr_real_synth},   {"dcr_within_real", dcr_within_real},
          {"dcr_within_synth", dcr_within_synth}, {"nndr_real_synth", nndr_real_synth},
          {"nndr_within_real", nndr_within_real}, {"nndr_within_synth", nndr_within_synth}};
}

DistanceSpace::DistanceSpace(const Table& a, const Table& b) : schema_(a.schema()) {
  require_same_schema(a, b);
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    const auto& spec = schema_[c];
    Column col{spec.kind};
    if (numeric_kind(spec.kind)) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const Table* t : {&a, &b}) {
        for (const auto& r : t->rows()) {
          if (r[c].missing) continue;
          lo = std::min(lo, r[c].value);
          hi = std::max(hi, r[c].value);
        }
      }
      col.lo = std::isfinite(lo) ? lo : 0.0;
      col.span = std::isfinite(lo) && hi > lo ? hi - lo : 1.0;
    }
    if (spec.kind != ColumnKind::Continuous) col.slots = category_slots(spec);
    cols_.push_back(col);
  }
}

Matrix DistanceSpace::embed(const Table& t) const {
  std::size_t width = 0;
  for (const auto& c : cols_) width += (c.kind != ColumnKind::Categorical ? 1 : 0) + c.slots;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(t.num_rows()), static_cast<Eigen::Index>(width));
  const double hot = 1.0 / std::sqrt(2.0);
  for (std::size_t r = 0; r < t.num_rows(); ++r) {
    Eigen::Index off = 0;
    for (std::size_t c = 0; c < cols_.size(); ++c) {
      const auto& col = cols_[c];
      const Cell& cell = t.at(r, c);
      if (col.kind != ColumnKind::Categorical) {
        out(static_cast<Eigen::Index>(r), off) = cell.missing ? 0.0 : (cell.value - col.lo) / col.span;
        ++off;
      }
      if (col.slots > 0) {
        out(static_cast<Eigen::Index>(r), off + static_cast<Eigen::Index>(category_code(schema_[c], cell))) = hot;
        off += static_cast<Eigen::Index>(col.slots);
      }
    }
  }
  return out;
}

NeighborDistances nearest_two(const Matrix& query, const Matrix& reference, bool exclude_self) {
  if (query.cols() != reference.cols()) throw Error(ErrorCode::ShapeMismatch, "nearest_two: width mismatch");
  const Eigen::Index n = query.rows(), m = reference.rows(), d = query.cols();
  NeighborDistances out;
  out.nearest.resize(static_cast<std::size_t>(n));
  out.second.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double best1 = std::numeric_limits<double>::infinity();
    double best2 = best1;
    const double* q = query.row(i).data();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (exclude_self && i == j) continue;
      const double* p = reference.row(j).data();
      double s = 0.0;
      Eigen::Index k = 0;
      for (; k < d; ++k) {
        const double diff = q[k] - p[k];
        s += diff * diff;
        if (s > best2) break;
      }
      if (k < d) continue;
      if (s < best1) {
        best2 = best1;
        best1 = s;
      } else if (s < best2) {
        best2 = s;
      }
    }
    out.nearest[static_cast<std::size_t>(i)] = std::sqrt(best1);
    out.second[static_cast<std::size_t>(i)] = std::sqrt(best2);
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

std::pair<double, double> fifth_percentiles(const NeighborDistances& nd) {
  std::vector<double> ratio(nd.nearest.size());
  for (std::size_t i = 0; i < ratio.size(); ++i) ratio[i] = nd.second[i] > 0.0 ? nd.nearest[i] / nd.second[i] : 0.0;
  return {percentile(nd.nearest, 5.0), percentile(ratio, 5.0)};
}

}  // namespace

PrivacyDistanceReport dcr_nndr(const Table& real, const Table& synth) {
  if (real.num_rows() < 3 || synth.num_rows() < 3) {
    throw Error(ErrorCode::TooFewRows, "distance metrics need at least 3 rows per table");
  }
  const DistanceSpace space(real, synth);
  const Matrix r = space.embed(real);
  const Matrix s = space.embed(synth);
  PrivacyDistanceReport rep;
  std::tie(rep.dcr_real_synth, rep.nndr_real_synth) = fifth_percentiles(nearest_two(s, r, false));
  // Within-set distances are scaled by that set's own range so neither depends on the other table.
  const Matrix r_own = DistanceSpace(real, real).embed(real);
  const Matrix s_own = DistanceSpace(synth, synth).embed(synth);
  std::tie(rep.dcr_within_real, rep.nndr_within_real) = fifth_percentiles(nearest_two(r_own, r_own, true));
  std::tie(rep.dcr_within_synth, rep.nndr_within_synth) = fifth_percentiles(nearest_two(s_own, s_own, true));
  return rep;
}

// ---------------------------------------------------------------------------
// ML utility

FeatureEncoder::FeatureEncoder(const Table& fit_on) : schema_(fit_on.schema()) {
  target_ = schema_.target_index();
  if (schema_[target_].kind != ColumnKind::Categorical) {
    throw Error(ErrorCode::InvalidSchema, "ML utility needs a categorical target");
  }
  classes_ = schema_[target_].categorical_values.size();
  lo_.assign(schema_.size(), 0.0);
  span_.assign(schema_.size(), 1.0);
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (!numeric_kind(schema_[c].kind)) continue;
    const auto v = fit_on.numeric_column(c);
    if (v.empty()) continue;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    lo_[c] = *lo;
    span_[c] = *hi > *lo ? *hi - *lo : 1.0;
  }
}

Matrix FeatureEncoder::transform(const Table& t) const {
  const auto& schema = t.schema();
  if (schema.size() != schema_.size()) throw Error(ErrorCode::SchemaMismatch, "feature encoder: column count differs");
  std::size_t width = 0;
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (c == target_) continue;
    if (schema_[c].kind != ColumnKind::Categorical) ++width;
    if (schema_[c].kind != ColumnKind::Continuous) width += category_slots(schema_[c]);
  }
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(t.num_rows()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < t.num_rows(); ++r) {
    Eigen::Index off = 0;
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      if (c == target_) continue;
      const Cell& cell = t.at(r, c);
      if (schema_[c].kind != ColumnKind::Categorical) {
        x(static_cast<Eigen::Index>(r), off++) = cell.missing ? 0.0 : (cell.value - lo_[c]) / span_[c];
      }
      if (schema_[c].kind != ColumnKind::Continuous) {
        x(static_cast<Eigen::Index>(r), off + static_cast<Eigen::Index>(category_code(schema_[c], cell))) = 1.0;
        off += static_cast<Eigen::Index>(category_slots(schema_[c]));
      }
    }
  }
  return x;
}

ml::Labels FeatureEncoder::labels(const Table& t) const {
  ml::Labels y;
  y.reserve(t.num_rows());
  for (const auto& r : t.rows()) y.push_back(r[target_].category());
  return y;
}

nlohmann::json ModelScores::to_json() const {
  return {{"accuracy", accuracy}, {"f1", f1}, {"auc", auc}, {"apr", apr}};
}

nlohmann::json UtilityReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : models) {
    per.push_back({{"model", ml::to_string(e.model)},
                   {"real", e.real.to_json()},
                   {"synthetic", e.synthetic.to_json()},
                   {"diff", e.diff.to_json()}});
  }
  return {{"models", per}, {"mean_diff", mean_diff.to_json()}};
}

ModelScores score_model(const ml::Classifier& model, const Matrix& x, const ml::Labels& y, std::size_t classes) {
  const Matrix p = model.predict_proba(x);
  const ml::Labels pred = model.predict(x);
  return {ml::accuracy(y, pred), ml::macro_f1(y, pred, classes), ml::roc_auc(y, p), ml::average_precision(y, p)};
}

UtilityReport ml_utility(const Table& real_train, const Table& synth_train, const Table& test,
                         const std::vector<ml::ModelKind>& models, std::uint64_t seed) {
  require_same_schema(real_train, synth_train);
  require_same_schema(real_train, test);
  const FeatureEncoder enc(real_train);
  const Matrix xr = enc.transform(real_train), xs = enc.transform(synth_train), xt = enc.transform(test);
  const auto yr = enc.labels(real_train), ys = enc.labels(synth_train), yt = enc.labels(test);
  UtilityReport rep;
  for (auto kind : models) {
    auto mr = ml::make_classifier(kind, seed);
    auto ms = ml::make_classifier(kind, seed);
    mr->fit(xr, yr, enc.num_classes());
    ms->fit(xs, ys, enc.num_classes());
    UtilityEntry e{kind, score_model(*mr, xt, yt, enc.num_classes()), score_model(*ms, xt, yt, enc.num_classes()), {}};
    e.diff = {e.real.accuracy - e.synthetic.accuracy, e.real.f1 - e.synthetic.f1, e.real.auc - e.synthetic.auc,
              e.real.apr - e.synthetic.apr};
    rep.models.push_back(e);
  }
  if (!rep.models.empty()) {
    const double inv = 1.0 / static_cast<double>(rep.models.size());
    for (const auto& e : rep.models) {
      rep.mean_diff.accuracy += e.diff.accuracy * inv;
      rep.mean_diff.f1 += e.diff.f1 * inv;
      rep.mean_diff.auc += e.diff.auc * inv;
      rep.mean_diff.apr += e.diff.apr * inv;
    }
  }
  return rep;
}

}  // namespace tabsynth
