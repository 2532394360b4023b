#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace tabsynth {

enum class ColumnKind { Continuous, Categorical, Mixed };

std::string to_string(ColumnKind kind);
ColumnKind column_kind_from_string(const std::string& s);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  // Categorical: ordered labels. Empty means "order of first appearance".
  std::vector<std::string> categorical_values;
  // Mixed: real values that receive their own dedicated mode (e.g. 0.0).
  std::vector<double> mixed_categorical_points;
  bool long_tail = false;
  bool is_target = false;
  // Decoded values are rounded to the nearest integer.
  bool integral = false;

  bool is_numeric() const { return kind != ColumnKind::Categorical; }
  bool operator==(const ColumnSpec&) const = default;
};

class TableSchema {
 public:
  TableSchema() = default;
  TableSchema(std::vector<ColumnSpec> columns, std::vector<std::string> missing_sentinels = {"", "?"});

  /// Checks every ColumnSpec invariant; throws InvalidSchema.
  void validate() const;

  std::size_t size() const { return columns_.size(); }
  const ColumnSpec& operator[](std::size_t i) const { return columns_[i]; }
  ColumnSpec& operator[](std::size_t i) { return columns_[i]; }
  const std::vector<ColumnSpec>& columns() const { return columns_; }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  std::size_t target_index() const;

  const std::vector<std::string>& missing_sentinels() const { return missing_sentinels_; }
  bool is_missing_token(const std::string& token) const;

  nlohmann::json to_json() const;
  static TableSchema from_json(const nlohmann::json& j);
  static TableSchema load(const std::filesystem::path& path);

  bool operator==(const TableSchema&) const = default;

 private:
  std::vector<ColumnSpec> columns_;
  std::vector<std::string> missing_sentinels_ = {"", "?"};
};

/// One table cell. Categorical cells hold the category index in `value`.
struct Cell {
  double value = 0.0;
  bool missing = false;

  static Cell number(double v) { return Cell{v, false}; }
  static Cell category(std::size_t k) { return Cell{static_cast<double>(k), false}; }
  static Cell absent() { return Cell{0.0, true}; }

  std::size_t category() const { return static_cast<std::size_t>(value); }
  bool operator==(const Cell&) const = default;
};

using Row = std::vector<Cell>;

class Table {
 public:
  Table() = default;
  explicit Table(TableSchema schema) : schema_(std::move(schema)) {}
  Table(TableSchema schema, std::vector<Row> rows);

  const TableSchema& schema() const { return schema_; }
  const std::vector<Row>& rows() const { return rows_; }
  std::size_t num_rows() const { return rows_.size(); }
  std::size_t num_columns() const { return schema_.size(); }
  bool empty() const { return rows_.empty(); }
  const Row& operator[](std::size_t i) const { return rows_[i]; }
  const Cell& at(std::size_t row, std::size_t col) const { return rows_[row][col]; }

  /// Appends a row after checking it against the schema.
  void add_row(Row row);

  /// Copy of the rows at `indices`, in that order.
  Table select(const std::vector<std::size_t>& indices) const;

  /// Numeric values of a numeric column (missing cells skipped).
  std::vector<double> numeric_column(std::size_t col) const;

  /// Category label for a categorical cell ("" for missing).
  std::string label(std::size_t row, std::size_t col) const;

  bool operator==(const Table&) const = default;

 private:
  void check_row(const Row& row) const;

  TableSchema schema_;
  std::vector<Row> rows_;
};

/// Parses a comma-separated file with a header row.
Table load_csv(const std::filesystem::path& path, const TableSchema& schema);
Table parse_csv(const std::string& text, const TableSchema& schema);

void write_csv(const Table& table, const std::filesystem::path& path);
std::string to_csv(const Table& table);

/// Per-target-class split; each class contributes round(ratio * count) rows to train.
std::pair<Table, Table> stratified_split(const Table& table, double ratio, std::uint64_t seed);

/// Uniform sample of n rows without replacement.
Table subsample_rows(const Table& table, std::size_t n, std::uint64_t seed);

std::string format_number(double v);

}  // namespace tabsynth
