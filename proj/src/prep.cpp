#include "table2vec/prep.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "table2vec/error.hpp"

namespace t2v {

int RecognizerConfig::resolved_feature_threshold(std::size_t customers) const {
  if (feature_threshold) return *feature_threshold;
  return std::max(1, static_cast<int>(std::ceil(0.05 * static_cast<double>(customers))));
}

void RecognizerConfig::validate() const {
  if (integer_unique_threshold < 2)
    throw Error(ErrorCode::kInvalidConfig, "integer_unique_threshold must be >= 2");
  if (pair_threshold_categorical < 0 || pair_threshold_numerical < 0)
    throw Error(ErrorCode::kInvalidConfig, "pair thresholds must be non-negative");
  if (feature_threshold && *feature_threshold < 1)
    throw Error(ErrorCode::kInvalidConfig, "feature_threshold must be >= 1");
}

void to_json(nlohmann::json& j, const RecognizerConfig& c) {
  j = nlohmann::json{{"integer_unique_threshold", c.integer_unique_threshold},
                     {"pair_threshold_categorical", c.pair_threshold_categorical},
                     {"pair_threshold_numerical", c.pair_threshold_numerical}};
  j["feature_threshold"] = c.feature_threshold ? nlohmann::json(*c.feature_threshold) : nlohmann::json();
}

void from_json(const nlohmann::json& j, RecognizerConfig& c) {
  c.integer_unique_threshold = j.value("integer_unique_threshold", c.integer_unique_threshold);
  c.pair_threshold_categorical = j.value("pair_threshold_categorical", c.pair_threshold_categorical);
  c.pair_threshold_numerical = j.value("pair_threshold_numerical", c.pair_threshold_numerical);
  if (j.contains("feature_threshold") && !j["feature_threshold"].is_null())
    c.feature_threshold = j["feature_threshold"].get<int>();
}

std::vector<BaseKind> nc_recognize(const BigTable& table, const RecognizerConfig& config) {
  if (table.customers.empty() || table.features.empty())
    throw Error(ErrorCode::kEmptyTable, "cannot recognise features of an empty table");
  config.validate();
  std::vector<BaseKind> kinds;
  kinds.reserve(table.features.size());
  for (std::size_t f = 0; f < table.features.size(); ++f) {
    bool any_token = false, any_number = false, any_date = false, any_fraction = false;
    std::set<double> distinct;
    for (const auto& c : table.customers) {
      for (const auto& r : c.records) {
        const CellValue& v = r.cells[f];
        if (is_token(v)) {
          any_token = true;
        } else if (const double* x = std::get_if<double>(&v)) {
          any_number = true;
          if (*x != std::floor(*x)) any_fraction = true;
          if (distinct.size() <= static_cast<std::size_t>(config.integer_unique_threshold))
            distinct.insert(*x);
        } else if (is_date(v)) {
          any_date = true;
        }
      }
    }
    if (static_cast<int>(any_token) + static_cast<int>(any_number) + static_cast<int>(any_date) > 1)
      throw Error(ErrorCode::kMixedKindFeature,
                  "feature '" + table.features[f] + "' mixes tokens, numbers or dates");
    if (any_date) {
      kinds.push_back(BaseKind::kDate);
    } else if (any_number) {
      const bool many = distinct.size() > static_cast<std::size_t>(config.integer_unique_threshold);
      kinds.push_back(any_fraction || many ? BaseKind::kNumerical : BaseKind::kCategorical);
    } else {
      // tokens only, or nothing observed at all
      kinds.push_back(BaseKind::kCategorical);
    }
  }
  return kinds;
}

std::vector<double> impute(std::span<const std::optional<double>> normalized) {
  std::vector<double> out;
  out.reserve(normalized.size());
  for (const auto& v : normalized) out.push_back(impute(v));
  return out;
}

NormStats numeric_range(const BigTable& table, std::size_t feature) {
  NormStats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& c : table.customers)
    for (const auto& r : c.records)
      if (const double* x = std::get_if<double>(&r.cells[feature])) {
        s.min = std::min(s.min, *x);
        s.max = std::max(s.max, *x);
      }
  if (s.min > s.max) return {0.0, 0.0};
  return s;
}

std::string token_key(const CellValue& v) { return format_cell(v); }

Eigen::VectorXd dynamics_statistic(const BigTable& table, std::size_t feature, BaseKind kind,
                                   const NormStats& norm) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.customers.size()));
  if (kind == BaseKind::kDate) return d;
  for (std::size_t u = 0; u < table.customers.size(); ++u) {
    const auto& recs = table.customers[u].records;
    double acc = 0;
    for (std::size_t i = 1; i < recs.size(); ++i) {
      const CellValue& prev = recs[i - 1].cells[feature];
      const CellValue& cur = recs[i].cells[feature];
      if (kind == BaseKind::kCategorical) {
        // Missing formats as "", which no token can equal
        acc += token_key(prev) != token_key(cur) ? 1.0 : 0.0;
      } else {
        const double* a = std::get_if<double>(&prev);
        const double* b = std::get_if<double>(&cur);
        if (a && b) acc += std::abs(uniform_normalize(*b, norm) - uniform_normalize(*a, norm));
      }
    }
    d[static_cast<Eigen::Index>(u)] = acc;
  }
  return d;
}

SdResult sd_recognize(const Eigen::MatrixXd& dynamics, std::span<const BaseKind> kinds,
                      const RecognizerConfig& config) {
  if (static_cast<std::size_t>(dynamics.cols()) != kinds.size())
    throw Error(ErrorCode::kShapeMismatch, "dynamics matrix has " + std::to_string(dynamics.cols()) +
                                               " columns for " + std::to_string(kinds.size()) +
                                               " features");
  const int t_f = config.resolved_feature_threshold(static_cast<std::size_t>(dynamics.rows()));
  SdResult out;
  for (std::size_t f = 0; f < kinds.size(); ++f) {
    const double t_d = kinds[f] == BaseKind::kNumerical ? config.pair_threshold_numerical
                                                        : config.pair_threshold_categorical;
    const auto col = dynamics.col(static_cast<Eigen::Index>(f));
    const auto count = static_cast<std::size_t>((col.array() > t_d).count());
    out.dynamics_count.push_back(count);
    out.dynamic.push_back(kinds[f] != BaseKind::kDate && count > static_cast<std::size_t>(t_f));
  }
  return out;
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()) + 2);
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kOovId : it->second;
}

int Vocabulary::lookup(const CellValue& v) const {
  if (is_missing(v)) return kMissingId;
  return lookup(token_key(v));
}

std::vector<int> tokenize(std::span<const CellValue> values, Vocabulary& vocab, TokenizeMode mode) {
  std::vector<int> ids;
  ids.reserve(values.size());
  for (const auto& v : values) {
    if (is_missing(v)) {
      ids.push_back(Vocabulary::kMissingId);
    } else if (mode == TokenizeMode::kTrain) {
      ids.push_back(vocab.add(token_key(v)));
    } else {
      ids.push_back(vocab.lookup(v));
    }
  }
  return ids;
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features, RecognizerConfig config)
    : features_(std::move(features)), config_(config) {
  index();
}

void FeatureSchema::index() {
  by_kind_.clear();
  std::size_t dates = 0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const auto& f = features_[i];
    if (f.kind == FeatureKind::kDateIndex) ++dates;
    if (is_numerical(f.kind) && f.norm.min > f.norm.max)
      throw Error(ErrorCode::kSchema, "feature '" + f.name + "' has min > max");
    by_kind_[f.kind].push_back(i);
  }
  if (dates > 1) throw Error(ErrorCode::kSchema, "more than one date-index feature");
}

std::vector<FeatureKind> FeatureSchema::kinds() const {
  std::vector<FeatureKind> out;
  for (const auto& f : features_) out.push_back(f.kind);
  return out;
}

const std::vector<std::size_t>& FeatureSchema::indices(FeatureKind kind) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = by_kind_.find(kind);
  return it == by_kind_.end() ? kEmpty : it->second;
}

double FeatureSchema::numeric_value(std::size_t feature, const CellValue& v) const {
  const double* x = std::get_if<double>(&v);
  if (!x) return 0.0;
  return uniform_normalize(*x, features_[feature].norm);
}

int FeatureSchema::token_id(std::size_t feature, const CellValue& v) const {
  return features_[feature].vocabulary.lookup(v);
}

void FeatureSchema::check_table(const BigTable& table) const {
  if (table.features.size() != features_.size())
    throw Error(ErrorCode::kSchemaMismatch, "table has " + std::to_string(table.features.size()) +
                                                " features, schema has " +
                                                std::to_string(features_.size()));
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (table.features[i] != features_[i].name)
      throw Error(ErrorCode::kSchemaMismatch,
                  "feature " + std::to_string(i) + " is '" + table.features[i] +
                      "', schema expects '" + features_[i].name + "'");
}

void to_json(nlohmann::json& j, const FeatureSchema& s) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : s.features()) {
    nlohmann::json e{{"name", f.name}, {"kind", kind_name(f.kind)}, {"dynamics_count", f.dynamics_count}};
    if (is_numerical(f.kind)) e["normalization"] = {{"min", f.norm.min}, {"max", f.norm.max}};
    if (is_categorical(f.kind)) e["vocabulary"] = f.vocabulary.tokens();
    features.push_back(std::move(e));
  }
  j = nlohmann::json{{"version", 1}, {"features", features}, {"thresholds", s.config()}};
}

void from_json(const nlohmann::json& j, FeatureSchema& s) {
  if (j.value("version", 0) != 1) throw Error(ErrorCode::kSchema, "unsupported schema version");
  std::vector<FeatureSpec> features;
  for (const auto& e : j.at("features")) {
    FeatureSpec f;
    f.name = e.at("name").get<std::string>();
    f.kind = kind_from_name(e.at("kind").get<std::string>());
    f.dynamics_count = e.value("dynamics_count", std::size_t{0});
    if (e.contains("normalization")) {
      f.norm.min = e["normalization"].at("min").get<double>();
      f.norm.max = e["normalization"].at("max").get<double>();
    }
    if (e.contains("vocabulary"))
      for (const auto& t : e["vocabulary"]) f.vocabulary.add(t.get<std::string>());
    features.push_back(std::move(f));
  }
  RecognizerConfig config;
  if (j.contains("thresholds")) config = j["thresholds"].get<RecognizerConfig>();
  s = FeatureSchema(std::move(features), config);
}

std::map<std::string, FeatureKind> parse_kind_overrides(const nlohmann::json& j) {
  std::map<std::string, FeatureKind> out;
  for (const auto& e : j.at("features")) {
    if (!e.contains("kind")) continue;
    out[e.at("name").get<std::string>()] = kind_from_name(e.at("kind").get<std::string>());
  }
  return out;
}

FeatureSchema build_schema(const BigTable& table, const SchemaOptions& options) {
  if (options.dynamic_analysis && !table.has_date_index)
    throw Error(ErrorCode::kMissingDateIndex, "dynamic analysis needs a date index column");
  for (const auto& [name, kind] : options.kind_overrides)
    if (!table.feature_index(name))
      throw Error(ErrorCode::kSchema, "override names unknown feature '" + name + "'");

  std::vector<BaseKind> base;
  {
    // Overridden features are exempt from nc recognition (they may be mixed).
    base.resize(table.features.size(), BaseKind::kCategorical);
    std::vector<std::size_t> auto_features;
    for (std::size_t f = 0; f < table.features.size(); ++f)
      if (!options.kind_overrides.count(table.features[f])) auto_features.push_back(f);
    if (!auto_features.empty()) {
      BigTable sub;
      for (std::size_t f : auto_features) sub.features.push_back(table.features[f]);
      for (const auto& c : table.customers) {
        CustomerRecords sc{c.id, {}, {}};
        for (const auto& r : c.records) {
          Record rec;
          for (std::size_t f : auto_features) rec.cells.push_back(r.cells[f]);
          sc.records.push_back(std::move(rec));
        }
        sub.customers.push_back(std::move(sc));
      }
      const auto sub_kinds = nc_recognize(sub, options.recognizer);
      for (std::size_t i = 0; i < auto_features.size(); ++i) base[auto_features[i]] = sub_kinds[i];
    }
    for (std::size_t f = 0; f < table.features.size(); ++f) {
      auto it = options.kind_overrides.find(table.features[f]);
      if (it == options.kind_overrides.end()) continue;
      base[f] = it->second == FeatureKind::kDateIndex ? BaseKind::kDate
                : is_numerical(it->second)            ? BaseKind::kNumerical
                                                      : BaseKind::kCategorical;
    }
  }

  const std::size_t nf = table.features.size();
  std::vector<NormStats> norms(nf);
  for (std::size_t f = 0; f < nf; ++f)
    if (base[f] == BaseKind::kNumerical) norms[f] = numeric_range(table, f);

  Eigen::MatrixXd dynamics = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(table.customers.size()),
                                                   static_cast<Eigen::Index>(nf));
  if (options.dynamic_analysis)
    for (std::size_t f = 0; f < nf; ++f)
      dynamics.col(static_cast<Eigen::Index>(f)) = dynamics_statistic(table, f, base[f], norms[f]);
  const SdResult sd = sd_recognize(dynamics, base, options.recognizer);

  std::vector<FeatureSpec> specs(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    FeatureSpec& s = specs[f];
    s.name = table.features[f];
    s.dynamics_count = sd.dynamics_count[f];
    auto it = options.kind_overrides.find(s.name);
    if (it != options.kind_overrides.end()) {
      s.kind = it->second;
    } else if (base[f] == BaseKind::kDate) {
      s.kind = FeatureKind::kDateIndex;
    } else if (base[f] == BaseKind::kNumerical) {
      s.kind = sd.dynamic[f] ? FeatureKind::kDynamicNumerical : FeatureKind::kStaticNumerical;
    } else {
      s.kind = sd.dynamic[f] ? FeatureKind::kDynamicCategorical : FeatureKind::kStaticCategorical;
    }
    if (is_numerical(s.kind)) s.norm = norms[f];
    if (is_categorical(s.kind)) {
      for (const auto& c : table.customers)
        for (const auto& r : c.records)
          if (!is_missing(r.cells[f])) s.vocabulary.add(token_key(r.cells[f]));
    }
  }
  return FeatureSchema(std::move(specs), options.recognizer);
}

}  // namespace t2v
