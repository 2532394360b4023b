#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "tabsynth/attacks.hpp"
#include "tabsynth/error.hpp"
#include "test_util.hpp"

using namespace tabsynth;
using namespace tabsynth::attacks;
namespace tt = tabsynth::testing;

namespace {

TableSchema two_numeric_one_cat() {
  return TableSchema({tt::continuous("a"), tt::continuous("b"), tt::categorical("y", {"p", "q", "r"}, true)});
}

/// Ignores its training data: draws from a fixed distribution with the sampling seed.
TrainFn data_independent() {
  return [](const Table& train, std::uint64_t) -> Sampler {
    const TableSchema schema = train.schema();
    return [schema](std::size_t n, std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> g(0.0, 3.0);
      std::bernoulli_distribution coin(0.2);
      Table t(schema);
      for (std::size_t i = 0; i < n; ++i) t.add_row({Cell::number(g(rng)), Cell::category(coin(rng) ? 1 : 0)});
      return t;
    };
  };
}

/// Releases a random subset of its own training rows.
TrainFn replay() {
  return [](const Table& train, std::uint64_t) -> Sampler {
    return [train](std::size_t n, std::uint64_t seed) {
      std::vector<std::size_t> idx(train.num_rows());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::mt19937_64 rng(seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(std::min(n, idx.size()));
      return train.select(idx);
    };
  };
}

}  // namespace

TEST(NaiveFeatures, ConstantAndSingleCategoryColumns) {
  Table t(two_numeric_one_cat());
  for (int i = 0; i < 5; ++i) t.add_row({Cell::number(2.5), Cell::number(i), Cell::category(2)});
  const auto f = feature_extract_naive(t);
  ASSERT_EQ(f.size(), 9u);
  EXPECT_EQ(f[0], 2.5);
  EXPECT_EQ(f[1], 2.5);
  EXPECT_EQ(f[2], 0.0);
  EXPECT_DOUBLE_EQ(f[3], 2.0);  // mean of 0..4
  EXPECT_DOUBLE_EQ(f[4], 2.0);
  EXPECT_DOUBLE_EQ(f[5], 2.5);  // sample variance of 0..4
  EXPECT_EQ(f[6], 1.0);
  EXPECT_EQ(f[7], 2.0);
  EXPECT_EQ(f[8], 2.0);
}

TEST(NaiveFeatures, MostAndLeastFrequentCategories) {
  Table t(two_numeric_one_cat());
  for (std::size_t k : {0u, 1u, 1u, 1u, 2u, 2u}) t.add_row({Cell::number(0), Cell::number(1), Cell::category(k)});
  const auto f = feature_extract_naive(t);
  EXPECT_EQ(f[6], 3.0);
  EXPECT_EQ(f[7], 1.0);
  EXPECT_EQ(f[8], 0.0);
}

TEST(CorrFeatures, PerfectCorrelationAndLength) {
  Table t(two_numeric_one_cat());
  for (int i = 0; i < 30; ++i) t.add_row({Cell::number(i), Cell::number(3.0 * i - 1), Cell::category(i % 3)});
  const auto f = feature_extract_corr(t);
  const std::size_t d = 2 + 4;  // two numerics, three categories plus the missing slot
  EXPECT_EQ(f.size(), d * (d - 1) / 2);
  EXPECT_NEAR(f[0], 1.0, 1e-12);
  // The missing-slot dummy is constant, so its entries are 0.
  EXPECT_EQ(f[d - 2], 0.0);
}

TEST(CorrFeatures, IndependentColumnsAreNearZero) {
  Table t(two_numeric_one_cat());
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<std::size_t> k(0, 2);
  for (int i = 0; i < 10000; ++i) t.add_row({Cell::number(g(rng)), Cell::number(g(rng)), Cell::category(k(rng))});
  const auto f = feature_extract_corr(t);
  // Numeric pairs and numeric-vs-dummy pairs; dummies of one column are dependent by construction.
  for (std::size_t i : {0u, 1u, 2u, 3u, 4u, 5u, 6u, 7u, 8u}) EXPECT_LT(std::abs(f[i]), 0.05) << i;
}

TEST(Gain, FormulaAndAntitone) {
  EXPECT_EQ(privacy_gain(1.0, 1.0), 0.0);
  EXPECT_EQ(privacy_gain(1.0, 0.5), 0.25);
  double prev = 1.0;
  for (double p = 0.0; p <= 1.0; p += 0.1) {
    const double g = privacy_gain(1.0, p);
    EXPECT_LT(g, prev);
    EXPECT_GE(g, -0.5);
    EXPECT_LE(g, 0.5);
    prev = g;
  }
}

TEST(Membership, DataIndependentGeneratorGivesQuarterGain) {
  const Table pool = tt::bimodal_binary_table(500, 1);
  for (FeatureMode mode : {FeatureMode::Naive, FeatureMode::Correlation}) {
    MembershipAttackConfig cfg;
    cfg.mode = mode;
    cfg.seed = 4;
    const AttackReport r = membership_audit(data_independent(), pool, 400, 5, cfg);
    EXPECT_EQ(r.repetitions.size(), 5u);
    EXPECT_NEAR(r.privacy_gain, 0.25, 0.05) << to_string(mode);
    EXPECT_EQ(r.p_real, 1.0);
  }
}

TEST(Membership, ReplayingGeneratorLeaks) {
  const Table pool = tt::bimodal_binary_table(500, 2);
  for (FeatureMode mode : {FeatureMode::Naive, FeatureMode::Correlation}) {
    MembershipAttackConfig cfg;
    cfg.mode = mode;
    cfg.seed = 5;
    const AttackReport r = membership_audit(replay(), pool, 400, 5, cfg);
    EXPECT_LT(r.privacy_gain, 0.15) << to_string(mode);
  }
}

TEST(Membership, TargetInsideReferenceIsRejected) {
  const Table ref = tt::bimodal_binary_table(50, 3);
  try {
    membership_attack(replay(), ref, ref[7], MembershipAttackConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
}

TEST(Membership, GeneratorErrorsArePropagatedWithContext) {
  const Table pool = tt::bimodal_binary_table(60, 3);
  const Table ref = pool.select({0, 1, 2, 3, 4});
  TrainFn broken = [](const Table&, std::uint64_t) -> Sampler { throw std::runtime_error("boom"); };
  try {
    membership_attack(broken, ref, pool[10], MembershipAttackConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GeneratorFailure);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST(Membership, UnbalancedSizesAreRejected) {
  MembershipAttackConfig cfg;
  cfg.train_size = 999;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.train_size = 1000;
  cfg.batches = 500;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(MembershipAttackConfig::from_json(MembershipAttackConfig{}.to_json()).to_json(),
            MembershipAttackConfig{}.to_json());
}

namespace {

Table linear_table(std::size_t n, std::uint64_t seed) {
  TableSchema schema({tt::continuous("x"), tt::continuous("s"), tt::categorical("y", {"a", "b"}, true)});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::bernoulli_distribution coin(0.5);
  Table t(schema);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = g(rng);
    const bool y = coin(rng);
    t.add_row({Cell::number(x), Cell::number(2.0 * x + (y ? 1.0 : 0.0) + 0.05 * g(rng)), Cell::category(y ? 1 : 0)});
  }
  return t;
}

}  // namespace

TEST(Attribute, RegressorRecoversALinearRelation) {
  const Table t = linear_table(500, 1);
  const SensitiveRegressor reg(t, 1, 1e-8);
  const auto pred = reg.predict(t);
  const auto truth = t.numeric_column(1);
  for (std::size_t i = 0; i < truth.size(); ++i) EXPECT_NEAR(pred[i], truth[i], 0.25);
}

TEST(Attribute, TrainingCopyGivesZeroGain) {
  const Table ref = linear_table(600, 2);
  TrainFn copy = [](const Table& train, std::uint64_t) -> Sampler {
    return [train](std::size_t, std::uint64_t) { return train; };
  };
  const AttackOutcome o = attribute_attack(copy, ref, 1, AttributeAttackConfig{});
  EXPECT_EQ(o.gain, 0.0);
  EXPECT_EQ(o.p_real, o.p_fake);
  EXPECT_GE(o.p_real, 0.0);
  EXPECT_LE(o.p_real, 1.0);
}

TEST(Attribute, ShuffledSensitiveColumnDestroysTheAssociation) {
  const Table ref = linear_table(600, 3);
  TrainFn shuffled = [](const Table& train, std::uint64_t seed) -> Sampler {
    return [train, seed](std::size_t, std::uint64_t) {
      std::vector<Row> rows = train.rows();
      std::vector<double> s;
      for (const auto& r : rows) s.push_back(r[1].value);
      std::mt19937_64 rng(seed);
      std::shuffle(s.begin(), s.end(), rng);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i][1] = Cell::number(s[i]);
      return Table(train.schema(), rows);
    };
  };
  const AttackReport r = attribute_audit(shuffled, ref, 1, 3, AttributeAttackConfig{});
  EXPECT_GT(r.privacy_gain, 0.0);
  EXPECT_GT(r.p_real, 0.8);
}

TEST(Attribute, SensitiveColumnMustBeContinuous) {
  const Table ref = linear_table(200, 4);
  EXPECT_THROW(attribute_attack(replay(), ref, 2, AttributeAttackConfig{}), Error);
}
