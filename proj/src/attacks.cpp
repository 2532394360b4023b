#include "tabsynth/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "tabsynth/error.hpp"
#include "tabsynth/metrics.hpp"

namespace tabsynth::attacks {

std::string to_string(FeatureMode m) { return m == FeatureMode::Naive ? "naive" : "correlation"; }

FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "naive") return FeatureMode::Naive;
  if (s == "correlation" || s == "corr") return FeatureMode::Correlation;
  throw Error(ErrorCode::InvalidConfig, "unknown feature mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Features

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

double sample_variance(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

std::vector<double> feature_extract_naive(const Table& batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "feature extraction needs a non-empty batch");
  const auto& schema = batch.schema();
  std::vector<double> out;
  out.reserve(3 * schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& spec = schema[c];
    if (spec.kind == ColumnKind::Categorical) {
      std::vector<std::size_t> counts(category_slots(spec), 0);
      for (const auto& r : batch.rows()) ++counts[category_code(spec, r[c])];
      std::size_t distinct = 0, most = 0, least = 0;
      bool first = true;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) continue;
        ++distinct;
        if (first || counts[k] > counts[most]) most = k;
        if (first || counts[k] < counts[least]) least = k;
        first = false;
      }
      out.insert(out.end(), {static_cast<double>(distinct), static_cast<double>(most), static_cast<double>(least)});
    } else {
      const auto v = batch.numeric_column(c);
      if (v.empty()) {
        out.insert(out.end(), {0.0, 0.0, 0.0});
        continue;
      }
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      out.insert(out.end(), {mean, median_of(v), sample_variance(v, mean)});
    }
  }
  return out;
}

std::vector<double> feature_extract_corr(const Table& batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "feature extraction needs a non-empty batch");
  const auto& schema = batch.schema();
  const std::size_t n = batch.num_rows();
  std::vector<std::vector<double>> cols;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& spec = schema[c];
    if (spec.kind != ColumnKind::Categorical) {
      const auto v = batch.numeric_column(c);
      const double fill = v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      std::vector<double> col(n);
      for (std::size_t r = 0; r < n; ++r) col[r] = batch.at(r, c).missing ? fill : batch.at(r, c).value;
      cols.push_back(std::move(col));
    }
    if (spec.kind != ColumnKind::Continuous) {
      const std::size_t slots = category_slots(spec);
      std::vector<std::vector<double>> dummies(slots, std::vector<double>(n, 0.0));
      for (std::size_t r = 0; r < n; ++r) dummies[category_code(spec, batch.at(r, c))][r] = 1.0;
      for (auto& d : dummies) cols.push_back(std::move(d));
    }
  }
  std::vector<double> out;
  out.reserve(cols.size() * (cols.size() - 1) / 2);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    for (std::size_t j = i + 1; j < cols.size(); ++j) out.push_back(pearson(cols[i], cols[j]));
  }
  return out;
}

std::vector<double> extract_features(const Table& batch, FeatureMode mode) {
  return mode == FeatureMode::Naive ? feature_extract_naive(batch) : feature_extract_corr(batch);
}

// ---------------------------------------------------------------------------
// Reports

double privacy_gain(double p_real, double p_fake) { return (p_real - p_fake) / 2.0; }

nlohmann::json AttackReport::to_json() const {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : repetitions) reps.push_back({{"p_fake", r.p_fake}, {"p_real", r.p_real}, {"gain", r.gain}});
  return {{"kind", kind}, {"p_fake", p_fake}, {"p_real", p_real}, {"privacy_gain", privacy_gain}, {"repetitions", reps}};
}

namespace {

AttackReport summarize(std::string kind, std::vector<AttackOutcome> reps) {
  AttackReport r;
  r.kind = std::move(kind);
  for (const auto& o : reps) {
    r.p_fake += o.p_fake;
    r.p_real += o.p_real;
    r.privacy_gain += o.gain;
  }
  const double inv = reps.empty() ? 0.0 : 1.0 / static_cast<double>(reps.size());
  r.p_fake *= inv;
  r.p_real *= inv;
  r.privacy_gain *= inv;
  r.repetitions = std::move(reps);
  return r;
}

Sampler train_or_fail(const TrainFn& train_fn, const Table& data, std::uint64_t seed, const char* which) {
  try {
    Sampler s = train_fn(data, seed);
    if (!s) throw Error(ErrorCode::GeneratorFailure, "factory returned no sampler");
    return s;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::GeneratorFailure) throw;
    throw Error(ErrorCode::GeneratorFailure, std::string(which) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::GeneratorFailure, std::string(which) + ": " + e.what());
  }
}

Table sample_or_fail(const Sampler& s, std::size_t n, std::uint64_t seed, const char* which) {
  try {
    return s(n, seed);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::GeneratorFailure, std::string(which) + " sampling: " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Membership

void MembershipAttackConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (batch_rows < 1) fail("batch_rows must be positive");
  if (train_size % 2 != 0 || test_size % 2 != 0) fail("attack train/test sizes must be even to stay balanced");
  if (train_size < 2 || test_size < 2) fail("attack train/test sizes must be at least 2");
  if (2 * batches < train_size + test_size) fail("too few batches for the requested attack train/test sizes");
  if (forest.trees < 1) fail("the attack forest needs at least one tree");
}

nlohmann::json MembershipAttackConfig::to_json() const {
  return {{"batches", batches},       {"batch_rows", batch_rows},       {"mode", to_string(mode)},
          {"train_size", train_size}, {"test_size", test_size},         {"trees", forest.trees},
          {"max_depth", forest.max_depth}, {"seed", seed}};
}

MembershipAttackConfig MembershipAttackConfig::from_json(const nlohmann::json& j) {
  MembershipAttackConfig c;
  try {
    c.batches = j.value("batches", c.batches);
    c.batch_rows = j.value("batch_rows", c.batch_rows);
    if (j.contains("mode")) c.mode = feature_mode_from_string(j.at("mode").get<std::string>());
    c.train_size = j.value("train_size", c.train_size);
    c.test_size = j.value("test_size", c.test_size);
    c.forest.trees = j.value("trees", c.forest.trees);
    c.forest.max_depth = j.value("max_depth", c.forest.max_depth);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("membership attack config: ") + e.what());
  }
  return c;
}

AttackOutcome membership_attack(const TrainFn& train_fn, const Table& reference, const Row& target,
                                const MembershipAttackConfig& cfg) {
  cfg.validate();
  for (const auto& r : reference.rows()) {
    if (r == target) throw Error(ErrorCode::InvalidConfig, "the target record already occurs in the reference set");
  }
  Table with_target = reference;
  with_target.add_row(target);

  std::mt19937_64 rng(cfg.seed);
  const Sampler without = train_or_fail(train_fn, reference, rng(), "generator without target");
  const Sampler with = train_or_fail(train_fn, with_target, rng(), "generator with target");

  std::vector<std::vector<double>> feats[2];
  for (std::size_t b = 0; b < cfg.batches; ++b) {
    feats[0].push_back(extract_features(sample_or_fail(without, cfg.batch_rows, rng(), "generator without target"), cfg.mode));
    feats[1].push_back(extract_features(sample_or_fail(with, cfg.batch_rows, rng(), "generator with target"), cfg.mode));
  }
  const std::size_t width = feats[0].front().size();

  // Balanced split: each label contributes train_size/2 and test_size/2 batches.
  Matrix x_train(static_cast<Eigen::Index>(cfg.train_size), static_cast<Eigen::Index>(width));
  Matrix x_test(static_cast<Eigen::Index>(cfg.test_size), static_cast<Eigen::Index>(width));
  ml::Labels y_train, y_test;
  for (std::size_t label = 0; label < 2; ++label) {
    std::vector<std::size_t> idx(cfg.batches);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < cfg.train_size / 2; ++k) {
      const auto& f = feats[label][idx[k]];
      x_train.row(static_cast<Eigen::Index>(y_train.size())) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), static_cast<Eigen::Index>(width));
      y_train.push_back(label);
    }
    for (std::size_t k = 0; k < cfg.test_size / 2; ++k) {
      const auto& f = feats[label][idx[cfg.train_size / 2 + k]];
      x_test.row(static_cast<Eigen::Index>(y_test.size())) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), static_cast<Eigen::Index>(width));
      y_test.push_back(label);
    }
  }
  ml::ForestOptions fo = cfg.forest;
  fo.seed = rng();
  ml::RandomForest forest(fo);
  forest.fit(x_train, y_train, 2);
  AttackOutcome o;
  o.p_real = 1.0;
  o.p_fake = ml::accuracy(y_test, forest.predict(x_test));
  o.gain = privacy_gain(o.p_real, o.p_fake);
  return o;
}

AttackReport membership_audit(const TrainFn& train_fn, const Table& pool, std::size_t reference_size,
                              std::size_t repetitions, const MembershipAttackConfig& cfg) {
  if (repetitions + reference_size > pool.num_rows()) {
    throw Error(ErrorCode::NTooLarge, "pool holds fewer rows than targets plus reference set");
  }
  std::vector<std::size_t> idx(pool.num_rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const Table reference = pool.select(std::vector<std::size_t>(
      idx.begin() + static_cast<std::ptrdiff_t>(repetitions),
      idx.begin() + static_cast<std::ptrdiff_t>(repetitions + reference_size)));
  std::vector<AttackOutcome> reps;
  for (std::size_t r = 0; r < repetitions; ++r) {
    MembershipAttackConfig c = cfg;
    c.seed = cfg.seed + 1000003 * (r + 1);
    reps.push_back(membership_attack(train_fn, reference, pool[idx[r]], c));
  }
  return summarize("membership", std::move(reps));
}

// ---------------------------------------------------------------------------
// Attribute inference

void AttributeAttackConfig::validate() const {
  if (test_size < 1) throw Error(ErrorCode::InvalidConfig, "attribute attack needs a test set");
  if (!(kappa_fraction > 0.0)) throw Error(ErrorCode::InvalidConfig, "kappa_fraction must be positive");
  if (!(ridge >= 0.0)) throw Error(ErrorCode::InvalidConfig, "ridge must be non-negative");
}

nlohmann::json AttributeAttackConfig::to_json() const {
  return {{"test_size", test_size}, {"kappa_fraction", kappa_fraction}, {"ridge", ridge}, {"seed", seed}};
}

AttributeAttackConfig AttributeAttackConfig::from_json(const nlohmann::json& j) {
  AttributeAttackConfig c;
  try {
    c.test_size = j.value("test_size", c.test_size);
    c.kappa_fraction = j.value("kappa_fraction", c.kappa_fraction);
    c.ridge = j.value("ridge", c.ridge);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("attribute attack config: ") + e.what());
  }
  return c;
}

SensitiveRegressor::SensitiveRegressor(const Table& fit_on, std::size_t sensitive, double ridge)
    : schema_(fit_on.schema()), sensitive_(sensitive) {
  if (sensitive >= schema_.size() || schema_[sensitive].kind != ColumnKind::Continuous) {
    throw Error(ErrorCode::InvalidConfig, "the sensitive column must be continuous");
  }
  if (fit_on.empty()) throw Error(ErrorCode::EmptyInput, "cannot fit a regressor on an empty table");
  lo_.assign(schema_.size(), 0.0);
  span_.assign(schema_.size(), 1.0);
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (schema_[c].kind == ColumnKind::Categorical) continue;
    const auto v = fit_on.numeric_column(c);
    if (v.empty()) continue;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    lo_[c] = *lo;
    span_[c] = *hi > *lo ? *hi - *lo : 1.0;
  }
  const Matrix x = design(fit_on);
  Vector y(x.rows());
  for (std::size_t r = 0; r < fit_on.num_rows(); ++r) y[static_cast<Eigen::Index>(r)] = fit_on.at(r, sensitive).value;
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += ridge;
  const Eigen::LDLT<Matrix> solver(gram);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::SingularDesign, "normal equations could not be factored");
  coef_ = solver.solve(x.transpose() * y);
  if (solver.info() != Eigen::Success || !coef_.allFinite()) {
    throw Error(ErrorCode::SingularDesign, "normal equations have no finite solution");
  }
}

Matrix SensitiveRegressor::design(const Table& t) const {
  std::size_t width = 1;
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    if (c == sensitive_) continue;
    if (schema_[c].kind != ColumnKind::Categorical) ++width;
    if (schema_[c].kind != ColumnKind::Continuous) width += category_slots(schema_[c]);
  }
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(t.num_rows()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < t.num_rows(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    x(row, 0) = 1.0;
    Eigen::Index off = 1;
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      if (c == sensitive_) continue;
      const Cell& cell = t.at(r, c);
      if (schema_[c].kind != ColumnKind::Categorical) x(row, off++) = cell.missing ? 0.0 : (cell.value - lo_[c]) / span_[c];
      if (schema_[c].kind != ColumnKind::Continuous) {
        x(row, off + static_cast<Eigen::Index>(category_code(schema_[c], cell))) = 1.0;
        off += static_cast<Eigen::Index>(category_slots(schema_[c]));
      }
    }
  }
  return x;
}

std::vector<double> SensitiveRegressor::predict(const Table& t) const {
  const Vector p = design(t) * coef_;
  return {p.data(), p.data() + p.size()};
}

double hit_rate(const std::vector<double>& predicted, const std::vector<double>& truth, double kappa) {
  if (predicted.size() != truth.size()) throw Error(ErrorCode::ShapeMismatch, "hit_rate: lengths differ");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += std::abs(predicted[i] - truth[i]) <= kappa;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

AttackOutcome attribute_attack(const TrainFn& train_fn, const Table& reference, std::size_t sensitive,
                               const AttributeAttackConfig& cfg) {
  cfg.validate();
  if (sensitive >= reference.num_columns() || reference.schema()[sensitive].kind != ColumnKind::Continuous) {
    throw Error(ErrorCode::InvalidConfig, "the sensitive column must be continuous");
  }
  if (cfg.test_size >= reference.num_rows()) throw Error(ErrorCode::NTooLarge, "test_size leaves no training rows");
  std::vector<std::size_t> idx(reference.num_rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const Table test = reference.select(std::vector<std::size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg.test_size)));
  const Table train = reference.select(std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(cfg.test_size), idx.end()));

  const Sampler gen = train_or_fail(train_fn, train, rng(), "generator");
  const Table synth = sample_or_fail(gen, train.num_rows(), rng(), "generator");

  const auto values = reference.numeric_column(sensitive);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double kappa = cfg.kappa_fraction * (*hi - *lo);
  const auto truth = test.numeric_column(sensitive);

  AttackOutcome o;
  o.p_real = hit_rate(SensitiveRegressor(train, sensitive, cfg.ridge).predict(test), truth, kappa);
  o.p_fake = hit_rate(SensitiveRegressor(synth, sensitive, cfg.ridge).predict(test), truth, kappa);
  o.gain = privacy_gain(o.p_real, o.p_fake);
  return o;
}

AttackReport attribute_audit(const TrainFn& train_fn, const Table& reference, std::size_t sensitive,
                             std::size_t repetitions, const AttributeAttackConfig& cfg) {
  std::vector<AttackOutcome> reps;
  for (std::size_t r = 0; r < repetitions; ++r) {
    AttributeAttackConfig c = cfg;
    c.seed = cfg.seed + 1000003 * (r + 1);
    reps.push_back(attribute_attack(train_fn, reference, sensitive, c));
  }
  return summarize("attribute", std::move(reps));
}

TrainFn gan_train_fn(const TrainConfig& config, std::optional<privacy::PrivacySpec> spec) {
  return [config, spec](const Table& data, std::uint64_t seed) -> Sampler {
    TrainConfig cfg = config;
    cfg.seed = seed;
    auto model = std::make_shared<GanModel>(spec ? privacy::train_private(data, cfg, *spec).model : train(data, cfg));
    return [model](std::size_t n, std::uint64_t s) { return sample(*model, n, std::nullopt, s); };
  };
}

}  // namespace tabsynth::attacks
