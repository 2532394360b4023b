#include "tabsynth/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "tabsynth/error.hpp"

namespace tabsynth {

std::string to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::Continuous: return "continuous";
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Mixed: return "mixed";
  }
  return "continuous";
}

ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "continuous") return ColumnKind::Continuous;
  if (s == "categorical") return ColumnKind::Categorical;
  if (s == "mixed") return ColumnKind::Mixed;
  throw Error(ErrorCode::InvalidSchema, "unknown column kind '" + s + "'");
}

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return std::to_string(v);
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// TableSchema

TableSchema::TableSchema(std::vector<ColumnSpec> columns, std::vector<std::string> missing_sentinels)
    : columns_(std::move(columns)), missing_sentinels_(std::move(missing_sentinels)) {
  validate();
}

void TableSchema::validate() const {
  std::set<std::string> names;
  std::size_t targets = 0;
  for (const auto& c : columns_) {
    if (c.name.empty()) throw Error(ErrorCode::InvalidSchema, "column with empty name");
    if (!names.insert(c.name).second) throw Error(ErrorCode::InvalidSchema, "duplicate column '" + c.name + "'");
    if (c.is_target) ++targets;
    const bool mixed = c.kind == ColumnKind::Mixed;
    if (mixed != !c.mixed_categorical_points.empty()) {
      throw Error(ErrorCode::InvalidSchema,
                  "column '" + c.name + "': mixed_categorical_points must be non-empty iff kind is mixed");
    }
    if (c.long_tail && !c.is_numeric()) {
      throw Error(ErrorCode::InvalidSchema, "column '" + c.name + "': long_tail requires a numeric column");
    }
    if (c.kind != ColumnKind::Categorical && !c.categorical_values.empty()) {
      throw Error(ErrorCode::InvalidSchema, "column '" + c.name + "': categorical_values on a numeric column");
    }
    std::set<std::string> labels(c.categorical_values.begin(), c.categorical_values.end());
    if (labels.size() != c.categorical_values.size()) {
      throw Error(ErrorCode::InvalidSchema, "column '" + c.name + "': duplicate category labels");
    }
  }
  if (!columns_.empty() && targets != 1) {
    throw Error(ErrorCode::InvalidSchema, "exactly one target column is required, found " + std::to_string(targets));
  }
}

std::optional<std::size_t> TableSchema::find(const std::string& name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t TableSchema::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw Error(ErrorCode::UnknownColumn, "no column named '" + name + "'");
}

std::size_t TableSchema::target_index() const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].is_target) return i;
  }
  throw Error(ErrorCode::InvalidSchema, "schema has no target column");
}

bool TableSchema::is_missing_token(const std::string& token) const {
  return std::find(missing_sentinels_.begin(), missing_sentinels_.end(), token) != missing_sentinels_.end();
}

nlohmann::json TableSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  std::string target;
  for (const auto& c : columns_) {
    nlohmann::json jc = {{"name", c.name}, {"kind", to_string(c.kind)}};
    if (!c.categorical_values.empty()) jc["categorical_values"] = c.categorical_values;
    if (!c.mixed_categorical_points.empty()) jc["mixed_categorical_points"] = c.mixed_categorical_points;
    if (c.long_tail) jc["long_tail"] = true;
    if (c.integral) jc["integral"] = true;
    if (c.is_target) target = c.name;
    cols.push_back(std::move(jc));
  }
  return {{"columns", cols}, {"target", target}, {"missing_sentinels", missing_sentinels_}};
}

TableSchema TableSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<ColumnSpec> cols;
    const std::string target = j.value("target", std::string());
    for (const auto& jc : j.at("columns")) {
      ColumnSpec c;
      c.name = jc.at("name").get<std::string>();
      c.kind = column_kind_from_string(jc.at("kind").get<std::string>());
      c.categorical_values = jc.value("categorical_values", std::vector<std::string>{});
      c.mixed_categorical_points = jc.value("mixed_categorical_points", std::vector<double>{});
      c.long_tail = jc.value("long_tail", false);
      c.integral = jc.value("integral", false);
      c.is_target = jc.value("is_target", false) || (!target.empty() && c.name == target);
      cols.push_back(std::move(c));
    }
    if (!target.empty() && std::none_of(cols.begin(), cols.end(), [&](const auto& c) { return c.name == target; })) {
      throw Error(ErrorCode::InvalidSchema, "target '" + target + "' is not a declared column");
    }
    auto sentinels = j.value("missing_sentinels", std::vector<std::string>{"", "?"});
    return TableSchema(std::move(cols), std::move(sentinels));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSchema, e.what());
  }
}

TableSchema TableSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open schema file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSchema, path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Table

Table::Table(TableSchema schema, std::vector<Row> rows) : schema_(std::move(schema)) {
  rows_.reserve(rows.size());
  for (auto& r : rows) add_row(std::move(r));
}

void Table::check_row(const Row& row) const {
  if (row.size() != schema_.size()) {
    throw Error(ErrorCode::LayoutMismatch, "row has " + std::to_string(row.size()) + " cells, schema has " +
                                               std::to_string(schema_.size()));
  }
  for (std::size_t c = 0; c < row.size(); ++c) {
    const auto& spec = schema_[c];
    const auto& cell = row[c];
    if (cell.missing) {
      if (spec.is_target) throw Error(ErrorCode::MissingTarget, "missing value in target column '" + spec.name + "'");
      if (spec.kind == ColumnKind::Continuous) {
        throw Error(ErrorCode::UnparsableCell, "missing value in continuous column '" + spec.name +
                                                   "' (declare it mixed or categorical)");
      }
      continue;
    }
    if (spec.kind == ColumnKind::Categorical) {
      if (cell.value < 0 || cell.category() >= spec.categorical_values.size() ||
          cell.value != std::floor(cell.value)) {
        throw Error(ErrorCode::OutOfRange, "category index out of range in column '" + spec.name + "'");
      }
    } else if (!std::isfinite(cell.value)) {
      throw Error(ErrorCode::UnparsableCell, "non-finite value in column '" + spec.name + "'");
    }
  }
}

void Table::add_row(Row row) {
  check_row(row);
  rows_.push_back(std::move(row));
}

Table Table::select(const std::vector<std::size_t>& indices) const {
  Table out(schema_);
  out.rows_.reserve(indices.size());
  for (auto i : indices) out.rows_.push_back(rows_.at(i));
  return out;
}

std::vector<double> Table::numeric_column(std::size_t col) const {
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) {
    if (!r[col].missing) out.push_back(r[col].value);
  }
  return out;
}

std::string Table::label(std::size_t row, std::size_t col) const {
  const auto& cell = rows_[row][col];
  if (cell.missing) return "";
  return schema_[col].categorical_values.at(cell.category());
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e && std::isfinite(out);
}

}  // namespace

Table parse_csv(const std::string& text, const TableSchema& schema_in) {
  TableSchema schema = schema_in;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw Error(ErrorCode::MissingHeader, "CSV has no header row");
  auto header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  // column position in the file -> schema index
  std::vector<std::size_t> file_to_schema(header.size());
  std::vector<bool> seen(schema.size(), false);
  for (std::size_t i = 0; i < header.size(); ++i) {
    auto idx = schema.find(header[i]);
    if (!idx) throw Error(ErrorCode::UnknownColumn, "CSV column '" + header[i] + "' is not in the schema");
    if (seen[*idx]) throw Error(ErrorCode::MissingHeader, "duplicate CSV column '" + header[i] + "'");
    seen[*idx] = true;
    file_to_schema[i] = *idx;
  }
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (!seen[c]) throw Error(ErrorCode::MissingHeader, "schema column '" + schema[c].name + "' absent from CSV header");
  }

  std::vector<bool> fixed_labels(schema.size());
  std::vector<std::map<std::string, std::size_t>> label_index(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    fixed_labels[c] = !schema[c].categorical_values.empty();
    for (std::size_t k = 0; k < schema[c].categorical_values.size(); ++k) {
      label_index[c][schema[c].categorical_values[k]] = k;
    }
  }

  std::vector<Row> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_no;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::UnparsableCell, "row " + std::to_string(row_no) + " has " +
                                                 std::to_string(fields.size()) + " fields, expected " +
                                                 std::to_string(header.size()));
    }
    Row row(schema.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const std::size_t c = file_to_schema[i];
      auto& spec = schema[c];
      const std::string token = trim(fields[i]);
      auto where = [&] { return "row " + std::to_string(row_no) + ", column '" + spec.name + "'"; };
      if (schema.is_missing_token(token)) {
        if (spec.is_target) throw Error(ErrorCode::MissingTarget, where() + ": missing target label");
        if (spec.kind == ColumnKind::Continuous) {
          throw Error(ErrorCode::UnparsableCell, where() + ": missing value in continuous column");
        }
        row[c] = Cell::absent();
        continue;
      }
      if (spec.kind == ColumnKind::Categorical) {
        auto it = label_index[c].find(token);
        if (it == label_index[c].end()) {
          if (fixed_labels[c]) throw Error(ErrorCode::UnparsableCell, where() + ": unknown category '" + token + "'");
          it = label_index[c].emplace(token, spec.categorical_values.size()).first;
          spec.categorical_values.push_back(token);
        }
        row[c] = Cell::category(it->second);
      } else {
        double v = 0;
        if (!parse_double(token, v)) throw Error(ErrorCode::UnparsableCell, where() + ": cannot parse '" + token + "'");
        row[c] = Cell::number(v);
      }
    }
    rows.push_back(std::move(row));
  }
  return Table(std::move(schema), std::move(rows));
}

Table load_csv(const std::filesystem::path& path, const TableSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

std::string to_csv(const Table& table) {
  const auto& schema = table.schema();
  const std::string missing = schema.missing_sentinels().empty() ? "" : schema.missing_sentinels().front();
  std::string out;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (c) out += ',';
    out += quote_if_needed(schema[c].name);
  }
  out += '\n';
  for (std::size_t r = 0; r < table.num_rows(); ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c) out += ',';
      const auto& cell = table.at(r, c);
      if (cell.missing) {
        out += quote_if_needed(missing);
      } else if (schema[c].kind == ColumnKind::Categorical) {
        out += quote_if_needed(table.label(r, c));
      } else {
        out += format_number(cell.value);
      }
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Table& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << to_csv(table);
}

// ---------------------------------------------------------------------------
// Sampling

std::pair<Table, Table> stratified_split(const Table& table, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::InvalidConfig, "split ratio must lie in (0, 1)");
  const std::size_t target = table.schema().target_index();
  if (table.schema()[target].kind != ColumnKind::Categorical) {
    throw Error(ErrorCode::InvalidConfig, "stratified_split needs a categorical target");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < table.num_rows(); ++r) by_class[table.at(r, target).category()].push_back(r);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2) {
      throw Error(ErrorCode::DegenerateClass,
                  "class '" + table.schema()[target].categorical_values[cls] + "' has fewer than 2 rows");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::shuffle(train_idx.begin(), train_idx.end(), rng);
  std::shuffle(test_idx.begin(), test_idx.end(), rng);
  return {table.select(train_idx), table.select(test_idx)};
}

Table subsample_rows(const Table& table, std::size_t n, std::uint64_t seed) {
  if (n > table.num_rows()) {
    throw Error(ErrorCode::NTooLarge, "requested " + std::to_string(n) + " rows from a table of " +
                                          std::to_string(table.num_rows()));
  }
  std::vector<std::size_t> idx(table.num_rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates: the first n slots are a uniform sample without replacement
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  return table.select(idx);
}

}  // namespace tabsynth
