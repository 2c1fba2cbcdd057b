#include "table2vec/metrics.hpp"

namespace t2v::eval {

namespace {

void check_lengths(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(predictions.size()) + " predictions for " +
                                                std::to_string(labels.size()) + " labels");
}

}  // namespace

double f_score(std::span<const int> predictions, std::span<const int> labels) {
  check_lengths(predictions, labels);
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0, y = labels[i] != 0;
    tp += p && y;
    fp += p && !y;
    fn += !p && y;
  }
  if (tp + fp == 0 || tp == 0) return 0.0;
  return 2 * tp / (2 * tp + fp + fn);
}

double weighted_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         AccuracyWeighting weighting) {
  check_lengths(predictions, labels);
  double count[2] = {0, 0}, hit[2] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i] != 0;
    count[y] += 1;
    hit[y] += (predictions[i] != 0) == (y != 0);
  }
  if (count[0] == 0 || count[1] == 0)
    throw Error(ErrorCode::kSingleClassInput, "weighted accuracy needs both classes");
  if (weighting == AccuracyWeighting::kClassFrequency) return (hit[0] + hit[1]) / (count[0] + count[1]);
  return 0.5 * (hit[0] / count[0] + hit[1] / count[1]);
}

MetricSet evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                          AccuracyWeighting weighting) {
  std::vector<int> predictions(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) predictions[i] = scores[i] >= 0.5 ? 1 : 0;
  MetricSet m;
  m.auc = auc(scores, labels);
  m.f_score = f_score(predictions, labels);
  m.weighted_accuracy = weighted_accuracy(predictions, labels, weighting);
  return m;
}

void to_json(nlohmann::json& j, const MetricSet& m) {
  j = nlohmann::json{{"auc", m.auc}, {"f_score", m.f_score}, {"weighted_accuracy", m.weighted_accuracy}};
}

}  // namespace t2v::eval
