#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "table2vec/model.hpp"

namespace t2v::interpret {

using numeric::Index;
using numeric::Matrix;

struct Target {
  enum class Kind { kPosition, kAllPositions, kClassProbability };
  Kind kind = Kind::kAllPositions;
  Index position = 0;   // kPosition
  std::string task;     // kClassProbability; empty means the model's first task
  int label = 1;        // kClassProbability
};

struct InterpretConfig {
  std::size_t k = 10;
  std::size_t mask_samples = 64;
  std::optional<double> delta_threshold;  // 0.05 x target std when unset
  Target target;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const InterpretConfig& c);
void from_json(const nlohmann::json& j, InterpretConfig& c);

// Scores customers (date-ordered records, schema feature order): one row per
// customer, one column per scalar target.
using TargetFn = std::function<Matrix(std::span<const CustomerRecords>)>;

// Representation positions (all of them) or one class probability.
TargetFn representation_target(const model::Table2VecModel& model);
TargetFn probability_target(const model::Table2VecModel& model, const std::string& task, int label);

// The k customers with the largest values; ties go to the smaller id.
std::vector<std::string> sensitive_customers(std::span<const std::string> ids, std::span<const double> values,
                                             std::size_t k);
// Column `position` of a customers x r representation matrix.
std::vector<std::string> sensitive_customers(std::span<const std::string> ids, const Matrix& representations,
                                             Index position, std::size_t k);

struct Cell {
  std::size_t feature = 0;
  std::size_t record = 0;
};

// target(masked) - target(original) for column `column`, where the cell is
// set to Missing. Throws kInvalidCellCoordinates.
double mask_and_delta(const TargetFn& target, const CustomerRecords& customer, std::size_t feature,
                      std::size_t record, Index column = 0);

// Deltas for many cells of one customer in one batch: cells x target columns.
Matrix mask_deltas(const TargetFn& target, const CustomerRecords& customer, std::span<const Cell> cells);

struct CellDelta {
  std::string customer;
  std::size_t feature = 0;
  std::size_t record = 0;
  double delta = 0;
};

struct FeatureScore {
  std::size_t feature = 0;
  std::string name;
  double mean_abs_delta = 0;
  int sign = 0;                // sign of the mean delta
  std::size_t support = 0;     // customers whose own mean |delta| clears the threshold
};

// Features with mean |delta| > threshold, by descending score then index.
std::vector<FeatureScore> sensitive_features(std::span<const CellDelta> deltas,
                                             std::span<const std::string> feature_names, double threshold);

struct CustomerContribution {
  std::string customer;
  std::vector<std::pair<std::string, double>> features;  // mean signed delta, by descending magnitude
};

struct TargetReport {
  std::string target;
  double threshold = 0;
  std::vector<std::string> sensitive_customers;
  std::vector<FeatureScore> ranking;
  std::vector<CustomerContribution> customers;
};

struct GenomeReport {
  std::vector<TargetReport> targets;
  std::vector<FeatureScore> summary;  // mean score per feature across targets
};

void to_json(nlohmann::json& j, const GenomeReport& r);

// Horizontal bar rendering of the summary and each target's ranking.
std::string render_bars(const GenomeReport& report, std::size_t width = 40);

// Generic form: `columns` names the target columns produced by `target`.
GenomeReport genome_report(const TargetFn& target, std::span<const std::string> columns, const BigTable& table,
                           std::span<const std::string> feature_names, const InterpretConfig& config);

GenomeReport genome_report(const model::Table2VecModel& model, const BigTable& table,
                           const InterpretConfig& config);

}  // namespace t2v::interpret
