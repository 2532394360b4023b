#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "tabsynth/conditioning.hpp"
#include "tabsynth/error.hpp"
#include "test_util.hpp"

namespace tabsynth {
namespace {

using testing::categorical;
using testing::continuous;

TEST(ClassPmf, LogFrequencyExample) {
  FreqStats s;
  s.counts = {{99.0, 1.0}};
  const auto pmf = s.class_pmf(0);
  // closed form: log(2) / (log(100) + log(2))
  const double rare = std::log(2.0) / (std::log(100.0) + std::log(2.0));
  EXPECT_NEAR(pmf[1], rare, 1e-12);
  EXPECT_NEAR(pmf[1], 0.1308, 1e-4);
  EXPECT_NEAR(pmf[0] + pmf[1], 1.0, 1e-12);
}

TEST(ClassPmf, IsMonotoneInCount) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cnt(0, 1000);
  for (int trial = 0; trial < 100; ++trial) {
    FreqStats s;
    s.counts.push_back({});
    for (int k = 0; k < 6; ++k) s.counts[0].push_back(cnt(rng));
    const auto pmf = s.class_pmf(0);
    for (int a = 0; a < 6; ++a) {
      for (int b = 0; b < 6; ++b) {
        if (s.counts[0][a] > s.counts[0][b]) EXPECT_GT(pmf[a], pmf[b]);
      }
    }
  }
}

struct Fixture {
  DataTransformer enc;
  Matrix encoded;
};

Fixture fixture() {
  TableSchema schema({continuous("x"), categorical("k", {"a", "b", "c"}), categorical("y", {"n", "p"}, true)});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::discrete_distribution<int> kd({80, 15, 5});
  std::bernoulli_distribution yd(0.1);
  Table t(schema);
  for (int i = 0; i < 400; ++i) {
    t.add_row({Cell::number(g(rng)), Cell::category(static_cast<std::size_t>(kd(rng))), Cell::category(yd(rng) ? 1 : 0)});
  }
  Fixture f{DataTransformer::fit(t), {}};
  f.encoded = f.enc.encode(t);
  return f;
}

TEST(CondVector, SingleBitAtTheRightOffset) {
  const auto f = fixture();
  const auto& layout = f.enc.layout();
  const auto c = build_cond_vector(layout, 1, 2);
  ASSERT_EQ(c.bits.size(), layout.cond_width);
  double total = 0.0;
  for (double b : c.bits) total += b;
  EXPECT_EQ(total, 1.0);
  const auto& span = layout.span_for_column(1);
  EXPECT_EQ(c.bits[span.cond_offset + 2], 1.0);
  EXPECT_THROW(build_cond_vector(layout, 1, 3), Error);
  EXPECT_THROW(build_cond_vector(layout, 9, 0), Error);
}

TEST(SampleCondition, ColumnUniformClassLogFrequency) {
  const auto f = fixture();
  const auto& layout = f.enc.layout();
  const auto stats = FreqStats::from_encoded(layout, f.encoded);
  std::mt19937_64 rng(17);
  const int n = 60000;
  std::map<std::size_t, int> span_hits;
  std::map<std::size_t, int> class_hits_k;
  const std::size_t k_span = [&] {
    for (std::size_t i = 0; i < layout.spans.size(); ++i) {
      if (layout.spans[i].column == 1) return i;
    }
    return std::size_t{0};
  }();
  for (int i = 0; i < n; ++i) {
    const auto c = sample_condition(layout, stats, rng);
    ++span_hits[c.span_index];
    if (c.span_index == k_span) ++class_hits_k[c.selected_class];
  }
  const double per_span = static_cast<double>(n) / static_cast<double>(layout.spans.size());
  for (auto [s, h] : span_hits) EXPECT_NEAR(h / per_span, 1.0, 0.05) << "span " << s;
  const auto pmf = stats.class_pmf(k_span);
  const double total_k = span_hits[k_span];
  for (std::size_t c = 0; c < pmf.size(); ++c) EXPECT_NEAR(class_hits_k[c] / total_k, pmf[c], 0.02);
}

TEST(ConditionalSampler, RowsSatisfyTheCondition) {
  const auto f = fixture();
  ConditionalSampler sampler(f.enc.layout(), f.encoded);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const auto c = sampler.sample(rng);
    const auto row = sampler.sample_row(c, rng);
    const auto& span = f.enc.layout().spans[c.span_index];
    EXPECT_EQ(f.encoded(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(span.onehot_offset + c.selected_class)),
              1.0);
  }
}

TEST(ConditionalSampler, EmptyConditionIsRejected) {
  const auto f = fixture();
  ConditionalSampler sampler(f.enc.layout(), f.encoded.topRows(3));
  std::mt19937_64 rng(5);
  // with 3 rows at least one class of k is absent
  const auto& span = f.enc.layout().span_for_column(1);
  bool saw = false;
  for (std::size_t c = 0; c < span.onehot_len; ++c) {
    const auto cond = build_cond_vector(f.enc.layout(), 1, c);
    if (!sampler.rows_for(cond.span_index, c).empty()) continue;
    saw = true;
    EXPECT_THROW(sampler.sample_row(cond, rng), Error);
  }
  EXPECT_TRUE(saw);
}

TEST(CondLoss, UniformSegmentGivesLogWidth) {
  const auto f = fixture();
  const auto& layout = f.enc.layout();
  const auto& span = layout.span_for_column(1);
  std::vector<double> row(layout.width, 0.0);
  for (const auto& s : layout.spans) {
    for (std::size_t j = 0; j < s.onehot_len; ++j) row[s.onehot_offset + j] = 1.0 / static_cast<double>(s.onehot_len);
  }
  const auto cond = build_cond_vector(layout, 1, 0);
  ASSERT_EQ(span.onehot_len, 3u);
  EXPECT_NEAR(generator_cond_loss(row, layout, cond), std::log(3.0), 1e-12);
  row[span.onehot_offset] = 1.0;
  row[span.onehot_offset + 1] = 0.0;
  row[span.onehot_offset + 2] = 0.0;
  EXPECT_EQ(generator_cond_loss(row, layout, cond), 0.0);
  row[span.onehot_offset] = 0.7;
  EXPECT_THROW(generator_cond_loss(row, layout, cond), Error);
}

TEST(CondLoss, FourWaySegment) {
  // 4 classes, uniform: ln 4
  TableSchema schema({categorical("k", {"a", "b", "c", "d"}), categorical("y", {"n", "p"}, true)});
  Table t(schema);
  for (std::size_t i = 0; i < 8; ++i) t.add_row({Cell::category(i % 4), Cell::category(i % 2)});
  const auto enc = DataTransformer::fit(t);
  std::vector<double> row(enc.layout().width, 0.0);
  for (const auto& s : enc.layout().spans) {
    for (std::size_t j = 0; j < s.onehot_len; ++j) row[s.onehot_offset + j] = 1.0 / static_cast<double>(s.onehot_len);
  }
  EXPECT_NEAR(generator_cond_loss(row, enc.layout(), build_cond_vector(enc.layout(), 0, 2)), 1.3863, 1e-4);
}

}  // namespace
}  // namespace tabsynth
