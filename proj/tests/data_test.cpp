#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <random>

#include "tabsynth/data.hpp"
#include "tabsynth/error.hpp"
#include "test_util.hpp"

namespace tabsynth {
namespace {

using testing::categorical;
using testing::continuous;
using testing::mixed;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::Io;
}

TEST(LoadCsv, ParsesSmallTable) {
  TableSchema schema({continuous("a"), categorical("b", {"x", "y"}, true)});
  Table t = parse_csv("a,b\n1.0,x\n2.0,y\n", schema);
  ASSERT_EQ(t.num_rows(), 2u);
  EXPECT_EQ(t.at(0, 0).value, 1.0);
  EXPECT_EQ(t.at(1, 0).value, 2.0);
  EXPECT_EQ(t.label(0, 1), "x");
  EXPECT_EQ(t.label(1, 1), "y");
}

TEST(LoadCsv, HeaderOrderIsIrrelevant) {
  TableSchema schema({continuous("a"), categorical("b", {}, true)});
  Table t = parse_csv("b,a\nq,3.5\n", schema);
  EXPECT_EQ(t.at(0, 0).value, 3.5);
  EXPECT_EQ(t.label(0, 1), "q");
}

TEST(LoadCsv, SentinelsBecomeMissingInMixedColumns) {
  TableSchema schema({mixed("m", {0.0}), categorical("c", {}), categorical("t", {}, true)});
  Table t = parse_csv("m,c,t\n,?,u\n?,a,u\n0,,v\n", schema);
  EXPECT_TRUE(t.at(0, 0).missing);
  EXPECT_TRUE(t.at(1, 0).missing);
  EXPECT_FALSE(t.at(2, 0).missing);
  EXPECT_TRUE(t.at(0, 1).missing);
  EXPECT_TRUE(t.at(2, 1).missing);
}

TEST(LoadCsv, ErrorContracts) {
  TableSchema schema({continuous("a"), categorical("b", {}, true)});
  EXPECT_EQ(code_of([&] { parse_csv("a,b\nabc,x\n", schema); }), ErrorCode::UnparsableCell);
  EXPECT_EQ(code_of([&] { parse_csv("a,b,c\n1,x,2\n", schema); }), ErrorCode::UnknownColumn);
  EXPECT_EQ(code_of([&] { parse_csv("a\n1\n", schema); }), ErrorCode::MissingHeader);
  EXPECT_EQ(code_of([&] { parse_csv("", schema); }), ErrorCode::MissingHeader);
  EXPECT_EQ(code_of([&] { parse_csv("a,b\n,x\n", schema); }), ErrorCode::UnparsableCell);
  EXPECT_EQ(code_of([&] { parse_csv("a,b\n1,?\n", schema); }), ErrorCode::MissingTarget);
  EXPECT_EQ(code_of([&] { load_csv("/nonexistent/file.csv", schema); }), ErrorCode::Io);
}

TEST(LoadCsv, UnknownLabelInDeclaredCategoriesIsRejected) {
  TableSchema schema({continuous("a"), categorical("b", {"x"}, true)});
  EXPECT_EQ(code_of([&] { parse_csv("a,b\n1,z\n", schema); }), ErrorCode::UnparsableCell);
}

TEST(LoadCsv, CategoriesFollowFirstAppearance) {
  TableSchema schema({categorical("b", {}, true)});
  Table t = parse_csv("b\nzeta\nalpha\nzeta\nmid\n", schema);
  EXPECT_EQ(t.schema()[0].categorical_values, (std::vector<std::string>{"zeta", "alpha", "mid"}));
  EXPECT_EQ(t.at(2, 0).category(), 0u);
}

TEST(Csv, WriteThenLoadIsCellExact) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1e3);
  std::uniform_int_distribution<int> cat(0, 2);
  std::bernoulli_distribution miss(0.1);
  TableSchema schema({continuous("c"), mixed("m", {0.0, -1.0}), categorical("k", {"p, q", "r\"s", "t"}),
                      categorical("y", {"0", "1"}, true)});
  Table t(schema);
  for (int i = 0; i < 300; ++i) {
    t.add_row({Cell::number(g(rng)), miss(rng) ? Cell::absent() : Cell::number(g(rng)),
               miss(rng) ? Cell::absent() : Cell::category(static_cast<std::size_t>(cat(rng))),
               Cell::category(static_cast<std::size_t>(i % 2))});
  }
  const auto path = std::filesystem::temp_directory_path() / "tabsynth_roundtrip.csv";
  write_csv(t, path);
  Table back = load_csv(path, schema);
  EXPECT_EQ(back, t);
  std::filesystem::remove(path);
}

Table balanced_table(std::size_t n) {
  TableSchema schema({continuous("x"), categorical("y", {"a", "b"}, true)});
  Table t(schema);
  for (std::size_t i = 0; i < n; ++i) t.add_row({Cell::number(static_cast<double>(i)), Cell::category(i % 2)});
  return t;
}

std::map<std::size_t, std::size_t> class_counts(const Table& t) {
  std::map<std::size_t, std::size_t> m;
  for (const auto& r : t.rows()) ++m[r[1].category()];
  return m;
}

TEST(StratifiedSplit, ExactProportions) {
  auto [train, test] = stratified_split(balanced_table(100), 0.8, 3);
  EXPECT_EQ(class_counts(train), (std::map<std::size_t, std::size_t>{{0, 40}, {1, 40}}));
  EXPECT_EQ(class_counts(test), (std::map<std::size_t, std::size_t>{{0, 10}, {1, 10}}));
}

TEST(StratifiedSplit, DeterministicAndAPermutation) {
  const Table t = balanced_table(57);
  auto a = stratified_split(t, 0.7, 99);
  auto b = stratified_split(t, 0.7, 99);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  std::vector<double> all;
  for (const auto* part : {&a.first, &a.second}) {
    for (const auto& r : part->rows()) all.push_back(r[0].value);
  }
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), 57u);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], static_cast<double>(i));
}

TEST(StratifiedSplit, WithinOneOfRatioPerClass) {
  std::mt19937_64 rng(5);
  TableSchema schema({continuous("x"), categorical("y", {"a", "b", "c"}, true)});
  Table t(schema);
  std::uniform_int_distribution<std::size_t> cls(0, 2);
  for (int i = 0; i < 301; ++i) t.add_row({Cell::number(i), Cell::category(cls(rng))});
  const auto total = class_counts(t);
  for (double ratio : {0.1, 0.33, 0.5, 0.9}) {
    auto [train, test] = stratified_split(t, ratio, 1);
    const auto tr = class_counts(train);
    for (auto [k, n] : total) {
      EXPECT_LE(std::abs(static_cast<double>(tr.at(k)) - ratio * static_cast<double>(n)), 1.0);
    }
  }
}

TEST(StratifiedSplit, RejectsDegenerateClass) {
  TableSchema three({continuous("x"), categorical("y", {"a", "b", "c"}, true)});
  Table v(three, {{Cell::number(0), Cell::category(0)}, {Cell::number(1), Cell::category(0)},
                  {Cell::number(2), Cell::category(2)}});
  EXPECT_EQ(code_of([&] { stratified_split(v, 0.5, 0); }), ErrorCode::DegenerateClass);
}

TEST(SubsampleRows, EdgeCases) {
  const Table t = balanced_table(20);
  Table all = subsample_rows(t, 20, 4);
  EXPECT_EQ(all.num_rows(), 20u);
  std::vector<double> vals;
  for (const auto& r : all.rows()) vals.push_back(r[0].value);
  std::sort(vals.begin(), vals.end());
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(vals[i], static_cast<double>(i));
  EXPECT_TRUE(subsample_rows(t, 0, 4).empty());
  EXPECT_EQ(code_of([&] { subsample_rows(t, 21, 4); }), ErrorCode::NTooLarge);
  EXPECT_EQ(subsample_rows(t, 7, 8), subsample_rows(t, 7, 8));
}

TEST(SubsampleRows, InclusionIsUniform) {
  // Frequency-count oracle: every row is included equally often across seeds.
  const Table t = balanced_table(10);
  std::vector<double> counts(10, 0.0);
  const int trials = 1000;
  for (int s = 0; s < trials; ++s) {
    const Table sub = subsample_rows(t, 3, static_cast<std::uint64_t>(s));
    for (const auto& r : sub.rows()) {
      counts[static_cast<std::size_t>(r[0].value)] += 1.0;
    }
  }
  const double expected = trials * 3.0 / 10.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 21.666);  // chi-square(9) at p = 0.01
}

TEST(Schema, JsonRoundTripAndValidation) {
  TableSchema schema({continuous("a", true), mixed("m", {0.0}), categorical("y", {"n", "p"}, true)});
  EXPECT_EQ(TableSchema::from_json(schema.to_json()), schema);

  nlohmann::json two_targets = {
      {"columns", {{{"name", "a"}, {"kind", "continuous"}, {"is_target", true}},
                   {{"name", "b"}, {"kind", "categorical"}, {"is_target", true}}}}};
  EXPECT_EQ(code_of([&] { TableSchema::from_json(two_targets); }), ErrorCode::InvalidSchema);
  nlohmann::json mixed_without_points = {
      {"columns", {{{"name", "a"}, {"kind", "mixed"}}, {{"name", "b"}, {"kind", "categorical"}}}}, {"target", "b"}};
  EXPECT_EQ(code_of([&] { TableSchema::from_json(mixed_without_points); }), ErrorCode::InvalidSchema);
  nlohmann::json bad_target = {{"columns", {{{"name", "a"}, {"kind", "continuous"}}}}, {"target", "zzz"}};
  EXPECT_EQ(code_of([&] { TableSchema::from_json(bad_target); }), ErrorCode::InvalidSchema);
}

}  // namespace
}  // namespace tabsynth
