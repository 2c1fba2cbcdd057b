#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "table2vec/metrics.hpp"
#include "table2vec/numeric/tensor.hpp"
#include "table2vec/prep.hpp"
#include "table2vec/table.hpp"

namespace t2v::eval {

using numeric::Matrix;

// Positive label <=> `token` occurs at least `min_count` times in the first
// dynamic categorical feature, then exactly round(noise * n) labels of each
// class are flipped.
struct PlantedSignal {
  std::string token = "cancel";
  int min_count = 2;
  double noise = 0.02;
};

struct SynthConfig {
  std::size_t customers = 2000;
  int static_numerical = 3;
  int dynamic_numerical = 3;
  int static_categorical = 3;
  int dynamic_categorical = 3;
  int records_min = 4;
  int records_max = 8;
  double positive_fraction = 0.2;
  double missing_fraction = 0.5;
  double structural_fraction = 0.3;
  PlantedSignal signal;
  std::uint64_t seed = 0;

  // Throws kInvalidConfig for out-of-range fields and kInfeasibleConfig when
  // the targets cannot be met together.
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Columns customer_id, date, sn_*, dn_*, sc_*, dc_*, label. Measured missing,
// structural and label ratios match the config in expectation; the label
// count and structural counts are exact.
BigTable synth_generate(const SynthConfig& config);

TableFormat synth_format();

// Normalised-imputed statics plus pooled dynamic summaries, one row per
// customer (table order after date ordering).
Matrix raw_features(const BigTable& table, const FeatureSchema& schema);
// Static columns of raw_features only.
Matrix static_features(const BigTable& table, const FeatureSchema& schema);

struct BaselineConfig {
  int epochs = 300;
  double learning_rate = 0.05;
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
  AccuracyWeighting weighting = AccuracyWeighting::kBalanced;
};

void to_json(nlohmann::json& j, const BaselineConfig& c);
void from_json(const nlohmann::json& j, BaselineConfig& c);

struct LinearClassifier {
  Eigen::RowVectorXd mean, scale;  // standardisation
  Eigen::VectorXd weights;
  double bias = 0;

  // Positive-class probability per row.
  Eigen::VectorXd predict(const Matrix& x) const;
};

struct BaselineResult {
  LinearClassifier classifier;
  MetricSet metrics;  // held-out split
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

// Class-weighted logistic regression trained full-batch with Adam on a
// seeded stratified split. Labels are 0/1. Throws kSingleClassInput when the
// training split lacks a class.
BaselineResult baseline_linear(const Matrix& x, std::span<const int> labels, const BaselineConfig& config);

}  // namespace t2v::eval
