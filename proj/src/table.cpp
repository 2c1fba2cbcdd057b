#include "table2vec/table.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "table2vec/error.hpp"

namespace t2v {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

bool is_missing_marker(std::string_view s) {
  return s.empty() || iequals(s, "na") || iequals(s, "nan") || iequals(s, "null");
}

bool parse_fixed_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Splits delimited text into rows of raw fields, honouring double quotes.
std::vector<std::vector<std::string>> split_rows(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    // a lone empty field is a blank line
    if (!(row.size() == 1 && row[0].empty() && !field_started)) rows.push_back(std::move(row));
    row.clear();
    field_started = false;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
      field_started = true;
    } else if (c == delim) {
      row.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
    ++i;
  }
  if (in_quotes) throw Error(ErrorCode::kParse, "unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

std::string quote_if_needed(const std::string& s, char delim) {
  const bool needs = s.find(delim) != std::string::npos || s.find('"') != std::string::npos ||
                     s.find('\n') != std::string::npos || s.find('\r') != std::string::npos;
  if (!needs) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::optional<std::int64_t> parse_date(std::string_view text) {
  text = trim(text);
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_fixed_int(text.substr(0, 4), y) || !parse_fixed_int(text.substr(5, 2), m) ||
      !parse_fixed_int(text.substr(8, 2), d))
    return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  std::int64_t seconds =
      std::chrono::sys_days{ymd}.time_since_epoch().count() * std::int64_t{86400};
  std::string_view rest = text.substr(10);
  if (rest.empty()) return seconds;
  if (rest.front() != 'T' && rest.front() != ' ') return std::nullopt;
  rest.remove_prefix(1);
  if (!rest.empty() && rest.back() == 'Z') rest.remove_suffix(1);
  int hh = 0, mm = 0, ss = 0;
  if (rest.size() != 8 && rest.size() != 5) return std::nullopt;
  if (rest[2] != ':' || !parse_fixed_int(rest.substr(0, 2), hh) ||
      !parse_fixed_int(rest.substr(3, 2), mm))
    return std::nullopt;
  if (rest.size() == 8 && (rest[5] != ':' || !parse_fixed_int(rest.substr(6, 2), ss)))
    return std::nullopt;
  if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
  return seconds + hh * 3600 + mm * 60 + ss;
}

std::string format_date(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[32];
  const int y = static_cast<int>(ymd.year());
  const unsigned mo = static_cast<unsigned>(ymd.month());
  const unsigned d = static_cast<unsigned>(ymd.day());
  if (rem == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", y, mo, d);
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", y, mo, d,
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                  static_cast<int>(rem % 60));
  }
  return buf;
}

CellValue parse_cell(std::string_view raw) {
  const std::string_view s = trim(raw);
  if (is_missing_marker(s)) return Missing{};
  double x = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ptr == s.data() + s.size()) {
    if (ec == std::errc() && std::isfinite(x)) return x;
    return Missing{};  // inf, or out of double range
  }
  if (auto d = parse_date(s)) return Date{*d};
  return Token{std::string(s)};
}

std::string format_cell(const CellValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Missing>) {
          return "";
        } else if constexpr (std::is_same_v<T, double>) {
          std::array<char, 64> buf{};
          auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
          return std::string(buf.data(), ptr);
        } else if constexpr (std::is_same_v<T, Token>) {
          return x.text;
        } else {
          return format_date(x.seconds);
        }
      },
      v);
}

std::size_t BigTable::record_count() const {
  std::size_t n = 0;
  for (const auto& c : customers) n += c.records.size();
  return n;
}

std::optional<std::size_t> BigTable::feature_index(std::string_view name) const {
  auto it = std::find(features.begin(), features.end(), name);
  if (it == features.end()) return std::nullopt;
  return static_cast<std::size_t>(it - features.begin());
}

std::optional<std::size_t> BigTable::task_index(std::string_view name) const {
  auto it = std::find(tasks.begin(), tasks.end(), name);
  if (it == tasks.end()) return std::nullopt;
  return static_cast<std::size_t>(it - tasks.begin());
}

BigTable parse_table(std::string_view text, const TableFormat& format) {
  auto rows = split_rows(text, format.delimiter);
  if (rows.empty()) throw Error(ErrorCode::kParse, "missing header row");
  const auto& header = rows.front();

  std::unordered_map<std::string, std::size_t> column_of;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name(trim(header[i]));
    if (!column_of.emplace(name, i).second)
      throw Error(ErrorCode::kSchema, "duplicate header '" + name + "'");
  }
  auto require = [&](const std::string& name, const char* what) {
    auto it = column_of.find(name);
    if (it == column_of.end())
      throw Error(ErrorCode::kSchema, std::string("missing ") + what + " column '" + name + "'");
    return it->second;
  };
  const std::size_t id_col = require(format.id_column, "id");
  std::optional<std::size_t> date_col;
  if (format.date_column) date_col = require(*format.date_column, "date");
  std::vector<std::size_t> label_cols;
  for (const auto& l : format.label_columns) label_cols.push_back(require(l, "label"));

  BigTable table;
  table.has_date_index = date_col.has_value();
  table.tasks = format.label_columns;
  std::vector<std::size_t> feature_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i == id_col || (date_col && i == *date_col) ||
        std::find(label_cols.begin(), label_cols.end(), i) != label_cols.end())
      continue;
    feature_cols.push_back(i);
    table.features.emplace_back(trim(header[i]));
  }

  std::unordered_map<std::string, std::size_t> customer_of;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size())
      throw Error(ErrorCode::kParse, "row " + std::to_string(r + 1) + " has " +
                                         std::to_string(row.size()) + " fields, header has " +
                                         std::to_string(header.size()));
    const std::string id(trim(row[id_col]));
    if (id.empty()) throw Error(ErrorCode::kParse, "row " + std::to_string(r + 1) + " has an empty id");
    auto [it, inserted] = customer_of.emplace(id, table.customers.size());
    if (inserted) {
      table.customers.push_back(CustomerRecords{id, {}, std::vector<std::optional<int>>(label_cols.size())});
    }
    CustomerRecords& customer = table.customers[it->second];

    Record rec;
    rec.cells.reserve(feature_cols.size());
    for (std::size_t c : feature_cols) rec.cells.push_back(parse_cell(row[c]));
    if (date_col) rec.date = parse_date(row[*date_col]);
    customer.records.push_back(std::move(rec));

    for (std::size_t t = 0; t < label_cols.size(); ++t) {
      const CellValue v = parse_cell(row[label_cols[t]]);
      if (is_missing(v)) continue;
      const double* x = std::get_if<double>(&v);
      if (!x || *x != std::floor(*x) || *x < 0)
        throw Error(ErrorCode::kSchema, "label '" + table.tasks[t] + "' of customer '" + id +
                                            "' is not a non-negative integer");
      const int label = static_cast<int>(*x);
      auto& slot = customer.labels[t];
      if (slot && *slot != label)
        throw Error(ErrorCode::kSchema, "conflicting labels for customer '" + id + "'");
      slot = label;
    }
  }
  return table;
}

BigTable load_table(const std::string& path, const TableFormat& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::kIo, "read failure on '" + path + "'");
  return parse_table(buf.str(), format);
}

std::string write_table(const BigTable& table, const TableFormat& format) {
  const char d = format.delimiter;
  std::string out;
  auto emit_row = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back(d);
      out += quote_if_needed(fields[i], d);
    }
    out.push_back('\n');
  };
  std::vector<std::string> header{format.id_column};
  if (table.has_date_index) header.push_back(format.date_column.value_or("date"));
  header.insert(header.end(), table.features.begin(), table.features.end());
  header.insert(header.end(), table.tasks.begin(), table.tasks.end());
  emit_row(header);
  for (const auto& c : table.customers) {
    for (const auto& rec : c.records) {
      std::vector<std::string> fields{c.id};
      if (table.has_date_index) fields.push_back(rec.date ? format_date(*rec.date) : "");
      for (const auto& cell : rec.cells) fields.push_back(format_cell(cell));
      for (const auto& l : c.labels) fields.push_back(l ? std::to_string(*l) : "");
      emit_row(fields);
    }
  }
  return out;
}

void save_table(const BigTable& table, const std::string& path, const TableFormat& format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  out << write_table(table, format);
  if (!out) throw Error(ErrorCode::kIo, "write failure on '" + path + "'");
}

BigTable order_records(BigTable table) {
  if (!table.has_date_index)
    throw Error(ErrorCode::kMissingDateIndex, "table has no date index column");
  for (auto& c : table.customers) {
    std::stable_sort(c.records.begin(), c.records.end(), [](const Record& a, const Record& b) {
      if (!a.date) return false;
      if (!b.date) return true;
      return *a.date < *b.date;
    });
  }
  return table;
}

std::string_view kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kStaticNumerical: return "static_numerical";
    case FeatureKind::kDynamicNumerical: return "dynamic_numerical";
    case FeatureKind::kStaticCategorical: return "static_categorical";
    case FeatureKind::kDynamicCategorical: return "dynamic_categorical";
    case FeatureKind::kDateIndex: return "date";
  }
  return "unknown";
}

FeatureKind kind_from_name(std::string_view name) {
  for (FeatureKind k : {FeatureKind::kStaticNumerical, FeatureKind::kDynamicNumerical,
                        FeatureKind::kStaticCategorical, FeatureKind::kDynamicCategorical,
                        FeatureKind::kDateIndex})
    if (kind_name(k) == name) return k;
  throw Error(ErrorCode::kSchema, "unknown feature kind '" + std::string(name) + "'");
}

TableStats compute_stats(const BigTable& table, std::span<const FeatureKind> kinds) {
  if (table.customers.empty() || table.features.empty())
    throw Error(ErrorCode::kEmptyTable, "table has no customers or no features");
  if (kinds.size() != table.features.size())
    throw Error(ErrorCode::kSchemaMismatch, "schema covers " + std::to_string(kinds.size()) +
                                                " features, table has " +
                                                std::to_string(table.features.size()));
  const std::size_t nf = table.features.size();
  const double nu = static_cast<double>(table.customers.size());

  TableStats stats;
  std::vector<double> missing_per_feature(nf, 0.0);
  std::vector<double> structural_per_feature(nf, 0.0);
  std::size_t rmin = std::numeric_limits<std::size_t>::max(), rmax = 0, rsum = 0;
  for (const auto& c : table.customers) {
    const std::size_t n = c.records.size();
    rmin = std::min(rmin, n);
    rmax = std::max(rmax, n);
    rsum += n;
    if (n == 0) {
      // no records at all: every feature is structurally absent
      for (std::size_t f = 0; f < nf; ++f) {
        missing_per_feature[f] += 1.0;
        structural_per_feature[f] += 1.0;
      }
      continue;
    }
    for (std::size_t f = 0; f < nf; ++f) {
      std::size_t missing = 0;
      for (const auto& r : c.records) missing += is_missing(r.cells[f]) ? 1 : 0;
      missing_per_feature[f] += static_cast<double>(missing) / static_cast<double>(n);
      if (missing == n) structural_per_feature[f] += 1.0;
    }
  }
  for (std::size_t f = 0; f < nf; ++f) {
    stats.feature_missing_ratio += missing_per_feature[f] / nu;
    stats.structural_missing_ratio += structural_per_feature[f] / nu;
  }
  stats.feature_missing_ratio /= static_cast<double>(nf);
  stats.structural_missing_ratio /= static_cast<double>(nf);

  std::array<std::size_t, 4> counts{};
  std::size_t modeled = 0;
  for (FeatureKind k : kinds) {
    if (k == FeatureKind::kDateIndex) continue;
    ++counts[static_cast<std::size_t>(k)];
    ++modeled;
  }
  if (modeled > 0) {
    const double m = static_cast<double>(modeled);
    stats.kind_ratios.sn = counts[0] / m;
    stats.kind_ratios.dn = counts[1] / m;
    stats.kind_ratios.sc = counts[2] / m;
    stats.kind_ratios.dc = counts[3] / m;
  }
  stats.records_per_customer = {rmin, static_cast<double>(rsum) / nu, rmax};

  for (std::size_t t = 0; t < table.tasks.size(); ++t) {
    std::size_t pos = 0, labeled = 0;
    for (const auto& c : table.customers) {
      if (!c.labels[t]) continue;
      ++labeled;
      pos += *c.labels[t] != 0 ? 1 : 0;
    }
    stats.label_ratio.emplace_back(table.tasks[t],
                                   labeled ? static_cast<double>(pos) / labeled : 0.0);
  }
  return stats;
}

void to_json(nlohmann::json& j, const TableStats& stats) {
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [task, ratio] : stats.label_ratio) labels[task] = ratio;
  j = nlohmann::json{
      {"label_ratio", labels},
      {"feature_missing_ratio", stats.feature_missing_ratio},
      {"structural_missing_ratio", stats.structural_missing_ratio},
      {"kind_ratios",
       {{"SN", stats.kind_ratios.sn},
        {"DN", stats.kind_ratios.dn},
        {"SC", stats.kind_ratios.sc},
        {"DC", stats.kind_ratios.dc}}},
      {"records_per_customer",
       {{"min", stats.records_per_customer.min},
        {"mean", stats.records_per_customer.mean},
        {"max", stats.records_per_customer.max}}},
  };
}

}  // namespace t2v
