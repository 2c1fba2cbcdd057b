#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "table2vec/table.hpp"

namespace t2v {

struct RecognizerConfig {
  int integer_unique_threshold = 20;
  double pair_threshold_categorical = 0.0;  // T_D for categorical features
  double pair_threshold_numerical = 0.05;   // T_D on normalised values
  std::optional<int> feature_threshold;     // T_F; ceil(0.05 |U|) when unset

  int resolved_feature_threshold(std::size_t customers) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const RecognizerConfig& c);
void from_json(const nlohmann::json& j, RecognizerConfig& c);

enum class BaseKind { kNumerical, kCategorical, kDate };

// Numerical / categorical / date per feature, from cell types and the
// integer distinct-value rule. Throws kMixedKindFeature naming the feature.
std::vector<BaseKind> nc_recognize(const BigTable& table, const RecognizerConfig& config);

struct NormStats {
  double min = 0;
  double max = 0;

  bool operator==(const NormStats&) const = default;
};

// (x - min) / (max - min) clamped to [0, 1]; 0.5 for a constant feature.
template <typename Scalar>
Scalar uniform_normalize(Scalar x, const NormStats& s) {
  if (!(s.max > s.min)) return Scalar(0.5);
  const Scalar v = (x - Scalar(s.min)) / Scalar(s.max - s.min);
  return v < Scalar(0) ? Scalar(0) : (v > Scalar(1) ? Scalar(1) : v);
}

inline double impute(std::optional<double> normalized) { return normalized.value_or(0.0); }
std::vector<double> impute(std::span<const std::optional<double>> normalized);

// min/max over the non-missing numbers of one feature.
NormStats numeric_range(const BigTable& table, std::size_t feature);

// One column of the dynamics matrix: change count (categorical, Missing is a
// token) or summed absolute successive difference of normalised values
// (numerical, pairs touching Missing skipped). Rows must be date-ordered.
Eigen::VectorXd dynamics_statistic(const BigTable& table, std::size_t feature, BaseKind kind,
                                   const NormStats& norm = {});

struct SdResult {
  std::vector<bool> dynamic;
  std::vector<std::size_t> dynamics_count;  // D_f
};

// Static/dynamic split: D_f = #{u : D_uf > T_D}; dynamic iff
// D_f > T_F. Date columns are never dynamic.
SdResult sd_recognize(const Eigen::MatrixXd& dynamics, std::span<const BaseKind> kinds,
                      const RecognizerConfig& config);

// Canonical token text of a cell for categorical features.
std::string token_key(const CellValue& v);

class Vocabulary {
 public:
  static constexpr int kMissingId = 0;
  static constexpr int kOovId = 1;

  // Ids are dense: 0 missing, 1 out-of-vocabulary, then first-seen order.
  int add(const std::string& token);
  int lookup(const CellValue& v) const;
  int lookup(const std::string& token) const;
  std::size_t size() const { return tokens_.size() + 2; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

enum class TokenizeMode { kTrain, kApply };

std::vector<int> tokenize(std::span<const CellValue> values, Vocabulary& vocab, TokenizeMode mode);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kStaticNumerical;
  Vocabulary vocabulary;   // categorical kinds
  NormStats norm;          // numerical kinds
  std::size_t dynamics_count = 0;

  bool operator==(const FeatureSpec&) const = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  FeatureSchema(std::vector<FeatureSpec> features, RecognizerConfig config);

  const std::vector<FeatureSpec>& features() const { return features_; }
  const RecognizerConfig& config() const { return config_; }
  std::vector<FeatureKind> kinds() const;

  // Table feature indices of one kind, in schema order.
  const std::vector<std::size_t>& indices(FeatureKind kind) const;

  // Normalised + imputed value of a numerical cell.
  double numeric_value(std::size_t feature, const CellValue& v) const;
  int token_id(std::size_t feature, const CellValue& v) const;

  // Throws kSchemaMismatch unless the table carries exactly these features.
  void check_table(const BigTable& table) const;

  bool operator==(const FeatureSchema& o) const { return features_ == o.features_; }

 private:
  void index();

  std::vector<FeatureSpec> features_;
  RecognizerConfig config_;
  std::map<FeatureKind, std::vector<std::size_t>> by_kind_;
};

void to_json(nlohmann::json& j, const FeatureSchema& s);
void from_json(const nlohmann::json& j, FeatureSchema& s);

struct SchemaOptions {
  RecognizerConfig recognizer;
  bool dynamic_analysis = true;  // false: every feature static, no date needed
  std::map<std::string, FeatureKind> kind_overrides;
};

// Full recognition pass: nc -> norm stats -> dynamics -> sd -> vocabularies.
// Expects a date-ordered table when dynamic_analysis is on.
FeatureSchema build_schema(const BigTable& table, const SchemaOptions& options);

// Parses {"features": [{"name": ..., "kind": ...}, ...]} into overrides.
std::map<std::string, FeatureKind> parse_kind_overrides(const nlohmann::json& j);

inline TableStats compute_stats(const BigTable& table, const FeatureSchema& schema) {
  const auto kinds = schema.kinds();
  return compute_stats(table, std::span<const FeatureKind>(kinds));
}

}  // namespace t2v
