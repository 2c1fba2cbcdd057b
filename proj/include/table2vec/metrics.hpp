#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "json.hpp"
#include "table2vec/error.hpp"

namespace t2v::eval {

// Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2, from
// midranks. Labels are 0 (negative) or nonzero (positive).
template <typename Scalar>
double auc(std::span<const Scalar> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(scores.size()) + " scores for " +
                                                std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] != 0) {
        rank_sum += midrank;
        positives += 1;
      }
    i = j;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  if (positives == 0 || negatives == 0)
    throw Error(ErrorCode::kSingleClassInput, "auc needs both classes");
  return (rank_sum - positives * (positives + 1) / 2) / (positives * negatives);
}

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  return auc(std::span<const double>(scores), std::span<const int>(labels));
}

// F1 of the positive class; 0 when nothing is predicted positive.
double f_score(std::span<const int> predictions, std::span<const int> labels);

enum class AccuracyWeighting { kBalanced, kClassFrequency };

// Mean per-class recall (balanced) or plain accuracy (class-frequency
// weighted recalls). Throws kSingleClassInput unless both classes occur.
double weighted_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         AccuracyWeighting weighting = AccuracyWeighting::kBalanced);

struct MetricSet {
  double auc = 0;
  double f_score = 0;
  double weighted_accuracy = 0;
};

// Scores are positive-class probabilities; predictions use threshold 0.5.
MetricSet evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                          AccuracyWeighting weighting = AccuracyWeighting::kBalanced);

void to_json(nlohmann::json& j, const MetricSet& m);

}  // namespace t2v::eval
