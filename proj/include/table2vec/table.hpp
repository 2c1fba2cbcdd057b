#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace t2v {

struct Missing {
  bool operator==(const Missing&) const = default;
};

struct Token {
  std::string text;
  bool operator==(const Token&) const = default;
};

struct Date {
  std::int64_t seconds = 0;  // since the Unix epoch, UTC
  bool operator==(const Date&) const = default;
};

// One cell of the big table. Numbers are always finite and tokens are
// non-empty after trimming; parse_cell() enforces both.
using CellValue = std::variant<Missing, double, Token, Date>;

inline bool is_missing(const CellValue& v) { return std::holds_alternative<Missing>(v); }
inline bool is_number(const CellValue& v) { return std::holds_alternative<double>(v); }
inline bool is_token(const CellValue& v) { return std::holds_alternative<Token>(v); }
inline bool is_date(const CellValue& v) { return std::holds_alternative<Date>(v); }

// Parses one raw field. Empty, "NA", "NaN", "null" (any case) and anything
// non-finite map to Missing; never throws.
CellValue parse_cell(std::string_view raw);

// Text form used when writing tables; parse_cell(format_cell(v)) == v for
// every cell produced by parse_cell.
std::string format_cell(const CellValue& v);

std::optional<std::int64_t> parse_date(std::string_view text);
std::string format_date(std::int64_t seconds);

struct Record {
  std::vector<CellValue> cells;       // one per feature, schema order
  std::optional<std::int64_t> date;   // date index, when the table has one

  bool operator==(const Record&) const = default;
};

struct CustomerRecords {
  std::string id;
  std::vector<Record> records;
  std::vector<std::optional<int>> labels;  // one slot per task

  bool operator==(const CustomerRecords&) const = default;
};

// Customer-indexed sequences of heterogeneous records.
struct BigTable {
  std::vector<std::string> features;
  std::vector<std::string> tasks;
  std::vector<CustomerRecords> customers;  // order of first appearance
  bool has_date_index = false;

  std::size_t record_count() const;
  std::optional<std::size_t> feature_index(std::string_view name) const;
  std::optional<std::size_t> task_index(std::string_view name) const;

  bool operator==(const BigTable&) const = default;
};

struct TableFormat {
  char delimiter = ',';
  std::string id_column = "customer_id";
  std::optional<std::string> date_column;
  std::vector<std::string> label_columns;
};

BigTable load_table(const std::string& path, const TableFormat& format);
BigTable parse_table(std::string_view text, const TableFormat& format);

void save_table(const BigTable& table, const std::string& path, const TableFormat& format);
std::string write_table(const BigTable& table, const TableFormat& format);

// Stable per-customer sort by date; rows without a date go last.
BigTable order_records(BigTable table);

enum class FeatureKind {
  kStaticNumerical,
  kDynamicNumerical,
  kStaticCategorical,
  kDynamicCategorical,
  kDateIndex,
};

std::string_view kind_name(FeatureKind kind);
FeatureKind kind_from_name(std::string_view name);
inline bool is_numerical(FeatureKind k) {
  return k == FeatureKind::kStaticNumerical || k == FeatureKind::kDynamicNumerical;
}
inline bool is_categorical(FeatureKind k) {
  return k == FeatureKind::kStaticCategorical || k == FeatureKind::kDynamicCategorical;
}
inline bool is_dynamic(FeatureKind k) {
  return k == FeatureKind::kDynamicNumerical || k == FeatureKind::kDynamicCategorical;
}

struct KindRatios {
  double sn = 0, dn = 0, sc = 0, dc = 0;
};

struct RecordsPerCustomer {
  std::size_t min = 0;
  double mean = 0;
  std::size_t max = 0;
};

struct TableStats {
  std::vector<std::pair<std::string, double>> label_ratio;  // positive fraction per task
  double feature_missing_ratio = 0;
  double structural_missing_ratio = 0;
  KindRatios kind_ratios;
  RecordsPerCustomer records_per_customer;
};

// Missing ratios are customer-level means averaged uniformly over customers
// and then over features. Positives are labels != 0.
TableStats compute_stats(const BigTable& table, std::span<const FeatureKind> kinds);

void to_json(nlohmann::json& j, const TableStats& stats);

}  // namespace t2v
