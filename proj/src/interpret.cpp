#include "table2vec/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "table2vec/error.hpp"
#include "table2vec/numeric/ops.hpp"

namespace t2v::interpret {

namespace {

constexpr std::size_t kTopContributions = 5;

std::vector<model::EncodedCustomer> encode_all(const model::Table2VecModel& model,
                                               std::span<const CustomerRecords> customers) {
  std::vector<model::EncodedCustomer> out;
  out.reserve(customers.size());
  for (const auto& c : customers) out.push_back(model.encode(c));
  return out;
}

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

int sign_of(double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }

std::string target_name(const Target& t, Index position) {
  if (t.kind == Target::Kind::kClassProbability) return "p(" + t.task + "=" + std::to_string(t.label) + ")";
  return "position " + std::to_string(position);
}

}  // namespace

void InterpretConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::kInvalidConfig, "interpret k must be >= 1");
  if (mask_samples < 1) throw Error(ErrorCode::kInvalidConfig, "mask_samples must be >= 1");
  if (delta_threshold && !(*delta_threshold >= 0))
    throw Error(ErrorCode::kInvalidConfig, "delta_threshold must be >= 0");
}

void to_json(nlohmann::json& j, const InterpretConfig& c) {
  nlohmann::json target;
  switch (c.target.kind) {
    case Target::Kind::kPosition: target = {{"kind", "position"}, {"position", c.target.position}}; break;
    case Target::Kind::kAllPositions: target = {{"kind", "all_positions"}}; break;
    case Target::Kind::kClassProbability:
      target = {{"kind", "class_probability"}, {"task", c.target.task}, {"label", c.target.label}};
      break;
  }
  j = nlohmann::json{{"k", c.k},
                     {"mask_samples", c.mask_samples},
                     {"delta_threshold", c.delta_threshold ? nlohmann::json(*c.delta_threshold) : nlohmann::json()},
                     {"target", target},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, InterpretConfig& c) {
  c.k = j.value("k", c.k);
  c.mask_samples = j.value("mask_samples", c.mask_samples);
  if (j.contains("delta_threshold") && !j.at("delta_threshold").is_null())
    c.delta_threshold = j.at("delta_threshold").get<double>();
  c.seed = j.value("seed", c.seed);
  if (j.contains("target")) {
    const auto& t = j.at("target");
    const std::string kind = t.value("kind", std::string("all_positions"));
    if (kind == "position") {
      c.target.kind = Target::Kind::kPosition;
      c.target.position = t.value("position", Index{0});
    } else if (kind == "all_positions") {
      c.target.kind = Target::Kind::kAllPositions;
    } else if (kind == "class_probability") {
      c.target.kind = Target::Kind::kClassProbability;
      c.target.task = t.value("task", std::string());
      c.target.label = t.value("label", 1);
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown interpret target kind '" + kind + "'");
    }
  }
}

TargetFn representation_target(const model::Table2VecModel& model) {
  return [&model](std::span<const CustomerRecords> customers) {
    const auto encoded = encode_all(model, customers);
    return model.represent(encoded);
  };
}

TargetFn probability_target(const model::Table2VecModel& model, const std::string& task, int label) {
  const std::size_t t = model.task_index(task);
  if (label < 0 || label >= model.tasks()[t].classes)
    throw Error(ErrorCode::kInvalidConfig, "task '" + task + "' has no class " + std::to_string(label));
  return [&model, task, label](std::span<const CustomerRecords> customers) {
    const auto encoded = encode_all(model, customers);
    return Matrix(model.predict(encoded, task).col(label));
  };
}

std::vector<std::string> sensitive_customers(std::span<const std::string> ids, std::span<const double> values,
                                             std::size_t k) {
  if (ids.size() != values.size())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(ids.size()) + " ids for " +
                                                std::to_string(values.size()) + " values");
  if (k < 1 || k > ids.size())
    throw Error(ErrorCode::kInvalidConfig, "k = " + std::to_string(k) + " for " + std::to_string(ids.size()) +
                                               " customers");
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return ids[a] < ids[b];
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(ids[order[i]]);
  return out;
}

std::vector<std::string> sensitive_customers(std::span<const std::string> ids, const Matrix& representations,
                                             Index position, std::size_t k) {
  if (position < 0 || position >= representations.cols())
    throw Error(ErrorCode::kPositionOutOfRange, "position " + std::to_string(position) + " outside width " +
                                                    std::to_string(representations.cols()));
  const Eigen::VectorXd column = representations.col(position);
  return sensitive_customers(ids, std::span<const double>(column.data(), static_cast<std::size_t>(column.size())), k);
}

Matrix mask_deltas(const TargetFn& target, const CustomerRecords& customer, std::span<const Cell> cells) {
  std::vector<CustomerRecords> batch;
  batch.reserve(cells.size() + 1);
  batch.push_back(customer);
  for (const Cell& c : cells) {
    if (c.record >= customer.records.size() || c.feature >= customer.records[c.record].cells.size())
      throw Error(ErrorCode::kInvalidCellCoordinates,
                  "customer '" + customer.id + "' has no cell (feature " + std::to_string(c.feature) + ", record " +
                      std::to_string(c.record) + ")");
    CustomerRecords masked = customer;
    masked.records[c.record].cells[c.feature] = Missing{};
    batch.push_back(std::move(masked));
  }
  const Matrix values = target(batch);
  return values.bottomRows(static_cast<Index>(cells.size())).rowwise() - values.row(0);
}

double mask_and_delta(const TargetFn& target, const CustomerRecords& customer, std::size_t feature,
                      std::size_t record, Index column) {
  const Cell cell{feature, record};
  const Matrix d = mask_deltas(target, customer, std::span<const Cell>(&cell, 1));
  if (column < 0 || column >= d.cols())
    throw Error(ErrorCode::kPositionOutOfRange, "target column " + std::to_string(column) + " of " +
                                                    std::to_string(d.cols()));
  return d(0, column);
}

std::vector<FeatureScore> sensitive_features(std::span<const CellDelta> deltas,
                                             std::span<const std::string> feature_names, double threshold) {
  struct Acc {
    double abs = 0, sum = 0;
    std::size_t n = 0;
    std::map<std::string, std::pair<double, std::size_t>> per_customer;
  };
  std::map<std::size_t, Acc> acc;
  for (const auto& d : deltas) {
    Acc& a = acc[d.feature];
    a.abs += std::abs(d.delta);
    a.sum += d.delta;
    ++a.n;
    auto& pc = a.per_customer[d.customer];
    pc.first += std::abs(d.delta);
    ++pc.second;
  }
  std::vector<FeatureScore> out;
  for (const auto& [feature, a] : acc) {
    const double score = a.abs / static_cast<double>(a.n);
    if (!(score > threshold)) continue;
    FeatureScore s;
    s.feature = feature;
    s.name = feature < feature_names.size() ? feature_names[feature] : std::to_string(feature);
    s.mean_abs_delta = score;
    s.sign = sign_of(a.sum);
    for (const auto& [customer, pc] : a.per_customer)
      s.support += pc.first / static_cast<double>(pc.second) > threshold;
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const FeatureScore& a, const FeatureScore& b) {
    if (a.mean_abs_delta != b.mean_abs_delta) return a.mean_abs_delta > b.mean_abs_delta;
    return a.feature < b.feature;
  });
  return out;
}

GenomeReport genome_report(const TargetFn& target, std::span<const std::string> columns, const BigTable& table,
                           std::span<const std::string> feature_names, const InterpretConfig& config) {
  config.validate();
  if (table.customers.empty()) throw Error(ErrorCode::kEmptyTable, "table has no customers");
  const BigTable ordered = table.has_date_index ? order_records(table) : table;
  const auto& customers = ordered.customers;
  std::vector<std::string> ids;
  for (const auto& c : customers) ids.push_back(c.id);

  const Matrix values = target(customers);
  if (values.cols() != static_cast<Index>(columns.size()))
    throw Error(ErrorCode::kShapeMismatch, "target yields " + std::to_string(values.cols()) + " columns, " +
                                               std::to_string(columns.size()) + " named");
  const std::size_t k = std::min(config.k, customers.size());

  // Masking trials per customer, shared by every target column.
  struct Trials {
    std::vector<Cell> cells;
    Matrix deltas;
  };
  std::map<std::size_t, Trials> cache;
  auto trials = [&](std::size_t u) -> const Trials& {
    auto it = cache.find(u);
    if (it != cache.end()) return it->second;
    const auto& c = customers[u];
    std::vector<Cell> cells;
    for (std::size_t r = 0; r < c.records.size(); ++r)
      for (std::size_t f = 0; f < c.records[r].cells.size(); ++f)
        if (!is_missing(c.records[r].cells[f])) cells.push_back({f, r});
    if (cells.size() > config.mask_samples) {
      Rng rng = substream(config.seed, "masking:" + c.id);
      for (std::size_t i = 0; i < config.mask_samples; ++i)
        std::swap(cells[i], cells[i + uniform_index(rng, cells.size() - i)]);
      cells.resize(config.mask_samples);
      std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        return a.record != b.record ? a.record < b.record : a.feature < b.feature;
      });
    }
    Trials t;
    t.deltas = cells.empty() ? Matrix(0, values.cols()) : mask_deltas(target, c, cells);
    t.cells = std::move(cells);
    return cache.emplace(u, std::move(t)).first->second;
  };

  GenomeReport report;
  for (Index col = 0; col < values.cols(); ++col) {
    TargetReport tr;
    tr.target = columns[static_cast<std::size_t>(col)];
    const Eigen::VectorXd column = values.col(col);
    const std::span<const double> column_values(column.data(), static_cast<std::size_t>(column.size()));
    tr.threshold = config.delta_threshold.value_or(0.05 * population_std(column_values));
    tr.sensitive_customers = sensitive_customers(ids, column_values, k);

    std::vector<CellDelta> deltas;
    for (const auto& id : tr.sensitive_customers) {
      const auto u = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
      const Trials& t = trials(u);
      std::map<std::size_t, std::pair<double, std::size_t>> own;
      for (std::size_t i = 0; i < t.cells.size(); ++i) {
        const double d = t.deltas(static_cast<Index>(i), col);
        deltas.push_back({id, t.cells[i].feature, t.cells[i].record, d});
        own[t.cells[i].feature].first += d;
        ++own[t.cells[i].feature].second;
      }
      CustomerContribution cc;
      cc.customer = id;
      for (const auto& [f, s] : own)
        cc.features.emplace_back(f < feature_names.size() ? feature_names[f] : std::to_string(f),
                                 s.first / static_cast<double>(s.second));
      std::stable_sort(cc.features.begin(), cc.features.end(),
                       [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });
      if (cc.features.size() > kTopContributions) cc.features.resize(kTopContributions);
      tr.customers.push_back(std::move(cc));
    }
    tr.ranking = sensitive_features(deltas, feature_names, tr.threshold);
    report.targets.push_back(std::move(tr));
  }

  // Summary: each feature's mean signed score over all targets (0 where the
  // feature missed a target's threshold).
  std::map<std::size_t, std::tuple<double, double, std::size_t>> agg;
  std::map<std::size_t, std::string> names;
  for (const auto& tr : report.targets)
    for (const auto& s : tr.ranking) {
      names[s.feature] = s.name;
      auto& [abs_sum, signed_sum, count] = agg[s.feature];
      abs_sum += s.mean_abs_delta;
      signed_sum += s.mean_abs_delta * s.sign;
      ++count;
    }
  for (const auto& [feature, a] : agg) {
    FeatureScore s;
    s.feature = feature;
    s.name = names[feature];
    s.mean_abs_delta = std::get<0>(a) / static_cast<double>(report.targets.size());
    s.sign = sign_of(std::get<1>(a));
    s.support = std::get<2>(a);
    report.summary.push_back(std::move(s));
  }
  std::stable_sort(report.summary.begin(), report.summary.end(), [](const FeatureScore& a, const FeatureScore& b) {
    if (a.mean_abs_delta != b.mean_abs_delta) return a.mean_abs_delta > b.mean_abs_delta;
    return a.feature < b.feature;
  });
  return report;
}

GenomeReport genome_report(const model::Table2VecModel& model, const BigTable& table,
                           const InterpretConfig& config) {
  std::vector<std::string> names;
  for (const auto& f : model.schema().features()) names.push_back(f.name);
  model.schema().check_table(table);
  const Target& t = config.target;
  switch (t.kind) {
    case Target::Kind::kClassProbability: {
      if (model.tasks().empty()) throw Error(ErrorCode::kUnknownTask, "model has no task");
      Target resolved = t;
      if (resolved.task.empty()) resolved.task = model.tasks().front().name;
      const std::vector<std::string> columns = {target_name(resolved, 0)};
      return genome_report(probability_target(model, resolved.task, resolved.label), columns, table, names, config);
    }
    case Target::Kind::kPosition: {
      const Index r = model.config().representation_width;
      if (t.position < 0 || t.position >= r)
        throw Error(ErrorCode::kPositionOutOfRange,
                    "position " + std::to_string(t.position) + " outside width " + std::to_string(r));
      const TargetFn all = representation_target(model);
      const Index position = t.position;
      const TargetFn one = [all, position](std::span<const CustomerRecords> c) { return Matrix(all(c).col(position)); };
      const std::vector<std::string> columns = {target_name(t, position)};
      return genome_report(one, columns, table, names, config);
    }
    case Target::Kind::kAllPositions: {
      std::vector<std::string> columns;
      for (Index p = 0; p < model.config().representation_width; ++p) columns.push_back(target_name(t, p));
      return genome_report(representation_target(model), columns, table, names, config);
    }
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown interpret target");
}

namespace {

nlohmann::json scores_json(const std::vector<FeatureScore>& scores) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : scores)
    out.push_back({{"feature", s.name}, {"mean_abs_delta", s.mean_abs_delta}, {"sign", s.sign}, {"support", s.support}});
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const GenomeReport& r) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : r.targets) {
    nlohmann::json customers = nlohmann::json::array();
    for (const auto& c : t.customers) {
      nlohmann::json features = nlohmann::json::array();
      for (const auto& [name, delta] : c.features) features.push_back({{"feature", name}, {"mean_delta", delta}});
      customers.push_back({{"customer", c.customer}, {"features", features}});
    }
    targets.push_back({{"target", t.target},
                       {"threshold", t.threshold},
                       {"sensitive_customers", t.sensitive_customers},
                       {"ranking", scores_json(t.ranking)},
                       {"customers", customers}});
  }
  j = nlohmann::json{{"summary", scores_json(r.summary)}, {"targets", targets}};
}

std::string render_bars(const GenomeReport& report, std::size_t width) {
  std::ostringstream out;
  auto block = [&](const std::string& title, const std::vector<FeatureScore>& scores) {
    out << title << '\n';
    if (scores.empty()) {
      out << "  (no feature above threshold)\n";
      return;
    }
    std::size_t name_width = 0;
    for (const auto& s : scores) name_width = std::max(name_width, s.name.size());
    const double top = scores.front().mean_abs_delta;
    for (const auto& s : scores) {
      const auto len = top > 0 ? static_cast<std::size_t>(std::lround(s.mean_abs_delta / top * static_cast<double>(width))) : 0;
      out << "  " << s.name << std::string(name_width - s.name.size() + 1, ' ') << (s.sign < 0 ? '-' : '+') << ' '
          << std::string(len, '#') << ' ' << s.mean_abs_delta << '\n';
    }
  };
  block("summary", report.summary);
  for (const auto& t : report.targets) block(t.target, t.ranking);
  return out.str();
}

}  // namespace t2v::interpret
