#include "table2vec/eval.hpp"

#include <algorithm>
#include <cmath>

#include "table2vec/error.hpp"
#include "table2vec/model.hpp"
#include "table2vec/numeric/ops.hpp"
#include "table2vec/numeric/optim.hpp"
#include "table2vec/random.hpp"

namespace t2v::eval {

namespace {

constexpr std::int64_t kBaseDate = 1577836800;  // 2020-01-01
constexpr std::int64_t kDay = 86400;
constexpr int kDcTokens = 6;
constexpr int kScTokens = 4;

int total_features(const SynthConfig& c) {
  return c.static_numerical + c.dynamic_numerical + c.static_categorical + c.dynamic_categorical;
}

double dynamic_fraction(const SynthConfig& c) {
  return static_cast<double>(c.dynamic_numerical + c.dynamic_categorical) / total_features(c);
}

// Missing rate of non-structural dynamic cells that makes the overall
// feature missing ratio equal missing_fraction.
double dynamic_missing_rate(const SynthConfig& c) {
  const double s = c.structural_fraction;
  if (s >= 1) return 0;
  const double dyn = dynamic_fraction(c);
  if (dyn == 0) return 0;
  return (c.missing_fraction - s) / ((1 - s) * dyn);
}

std::size_t exact_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Signal positives before noise, so that exactly round(p * n) labels end up
// positive after flipping round(noise * class size) of each class.
struct LabelPlan {
  std::size_t positives = 0;     // final positive count
  std::size_t signal = 0;        // customers carrying the pattern
  std::size_t flip_signal = 0;   // pattern carriers labeled negative
  std::size_t flip_plain = 0;    // non-carriers labeled positive
};

LabelPlan plan_labels(const SynthConfig& c) {
  const std::size_t n = c.customers;
  LabelPlan plan;
  plan.positives = exact_count(c.positive_fraction, n);
  const double eta = c.signal.noise;
  const double s1 = (static_cast<double>(plan.positives) - eta * static_cast<double>(n)) / (1 - 2 * eta);
  if (s1 < 0 || s1 > static_cast<double>(n))
    throw Error(ErrorCode::kInfeasibleConfig, "noise rate cannot produce the requested positive fraction");
  plan.signal = static_cast<std::size_t>(std::llround(s1));
  plan.flip_signal = exact_count(eta, plan.signal);
  const std::size_t kept = plan.signal - plan.flip_signal;
  if (kept > plan.positives)
    throw Error(ErrorCode::kInfeasibleConfig, "noise rate cannot produce the requested positive fraction");
  plan.flip_plain = plan.positives - kept;
  if (plan.flip_plain > n - plan.signal)
    throw Error(ErrorCode::kInfeasibleConfig, "noise rate cannot produce the requested positive fraction");
  return plan;
}

}  // namespace

void SynthConfig::validate() const {
  auto fraction = [](double v, const char* name) {
    if (!(v >= 0 && v <= 1)) throw Error(ErrorCode::kInvalidConfig, std::string(name) + " must lie in [0, 1]");
  };
  fraction(positive_fraction, "positive_fraction");
  fraction(missing_fraction, "missing_fraction");
  fraction(structural_fraction, "structural_fraction");
  fraction(signal.noise, "signal.noise");
  if (customers == 0) throw Error(ErrorCode::kInvalidConfig, "customers must be >= 1");
  if (static_numerical < 0 || dynamic_numerical < 0 || static_categorical < 0 || dynamic_categorical < 0)
    throw Error(ErrorCode::kInvalidConfig, "feature counts must be >= 0");
  if (dynamic_categorical < 1)
    throw Error(ErrorCode::kInvalidConfig, "the planted signal needs a dynamic categorical feature");
  if (records_min < 1 || records_max < records_min)
    throw Error(ErrorCode::kInvalidConfig, "records range must satisfy 1 <= min <= max");
  if (signal.min_count < 1 || signal.token.empty())
    throw Error(ErrorCode::kInvalidConfig, "signal needs a token and min_count >= 1");
  if (signal.noise >= 0.5) throw Error(ErrorCode::kInfeasibleConfig, "signal.noise must be below 0.5");

  if (structural_fraction >= 1 && positive_fraction > signal.noise)
    throw Error(ErrorCode::kInfeasibleConfig, "structural_fraction 1 leaves no room for the planted signal");
  if (structural_fraction > missing_fraction)
    throw Error(ErrorCode::kInfeasibleConfig, "structural_fraction exceeds missing_fraction");
  const double q = dynamic_missing_rate(*this);
  const double cap = 1.0 - 1.0 / records_min;
  if (q > cap + 1e-12 || (dynamic_fraction(*this) == 0 && missing_fraction != structural_fraction))
    throw Error(ErrorCode::kInfeasibleConfig,
                "missing_fraction unreachable: dynamic cells would need missing rate " + std::to_string(q) +
                    " above " + std::to_string(cap));
  if (records_min < signal.min_count && positive_fraction > signal.noise)
    throw Error(ErrorCode::kInfeasibleConfig, "records_min below signal.min_count");
  plan_labels(*this);
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"customers", c.customers},
                     {"static_numerical", c.static_numerical},
                     {"dynamic_numerical", c.dynamic_numerical},
                     {"static_categorical", c.static_categorical},
                     {"dynamic_categorical", c.dynamic_categorical},
                     {"records_min", c.records_min},
                     {"records_max", c.records_max},
                     {"positive_fraction", c.positive_fraction},
                     {"missing_fraction", c.missing_fraction},
                     {"structural_fraction", c.structural_fraction},
                     {"signal",
                      {{"token", c.signal.token}, {"min_count", c.signal.min_count}, {"noise", c.signal.noise}}},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.customers = j.value("customers", c.customers);
  c.static_numerical = j.value("static_numerical", c.static_numerical);
  c.dynamic_numerical = j.value("dynamic_numerical", c.dynamic_numerical);
  c.static_categorical = j.value("static_categorical", c.static_categorical);
  c.dynamic_categorical = j.value("dynamic_categorical", c.dynamic_categorical);
  c.records_min = j.value("records_min", c.records_min);
  c.records_max = j.value("records_max", c.records_max);
  c.positive_fraction = j.value("positive_fraction", c.positive_fraction);
  c.missing_fraction = j.value("missing_fraction", c.missing_fraction);
  c.structural_fraction = j.value("structural_fraction", c.structural_fraction);
  if (j.contains("signal")) {
    const auto& s = j.at("signal");
    c.signal.token = s.value("token", c.signal.token);
    c.signal.min_count = s.value("min_count", c.signal.min_count);
    c.signal.noise = s.value("noise", c.signal.noise);
  }
  c.seed = j.value("seed", c.seed);
}

TableFormat synth_format() {
  TableFormat f;
  f.date_column = "date";
  f.label_columns = {"label"};
  return f;
}

BigTable synth_generate(const SynthConfig& config) {
  config.validate();
  const std::size_t n = config.customers;
  const LabelPlan plan = plan_labels(config);
  Rng rng = substream(config.seed, "synth");

  BigTable table;
  table.has_date_index = true;
  table.tasks = {"label"};
  struct Column {
    char kind;
    int index;
  };
  std::vector<Column> columns;
  auto add = [&](char kind, const char* prefix, int count) {
    for (int i = 0; i < count; ++i) {
      table.features.push_back(std::string(prefix) + "_" + std::to_string(i));
      columns.push_back({kind, i});
    }
  };
  add('s', "sn", config.static_numerical);
  add('d', "dn", config.dynamic_numerical);
  add('c', "sc", config.static_categorical);
  add('e', "dc", config.dynamic_categorical);
  const std::size_t nf = columns.size();
  const std::size_t signal_feature = static_cast<std::size_t>(config.static_numerical + config.dynamic_numerical +
                                                              config.static_categorical);

  // Exactly round(s * n) structurally missing customers per feature.
  std::vector<std::vector<bool>> structural(nf, std::vector<bool>(n, false));
  for (std::size_t f = 0; f < nf; ++f) {
    auto order = iota(n);
    shuffle(order, rng);
    const std::size_t k = exact_count(config.structural_fraction, n);
    for (std::size_t i = 0; i < k; ++i) structural[f][order[i]] = true;
  }

  std::vector<int> lengths(n);
  for (auto& len : lengths)
    len = config.records_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(
                                                                       config.records_max - config.records_min + 1)));

  // present[f][u][r]
  const double q = dynamic_missing_rate(config);
  std::vector<std::vector<std::vector<bool>>> present(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    present[f].resize(n);
    const bool dynamic = columns[f].kind == 'd' || columns[f].kind == 'e';
    for (std::size_t u = 0; u < n; ++u) {
      const auto len = static_cast<std::size_t>(lengths[u]);
      auto& cells = present[f][u];
      cells.assign(len, !structural[f][u]);
      if (structural[f][u] || !dynamic) continue;
      const double expected = q * static_cast<double>(len);
      auto missing = static_cast<std::size_t>(std::floor(expected));
      if (uniform01(rng) < expected - std::floor(expected)) ++missing;
      missing = std::min(missing, len - 1);
      auto slots = iota(len);
      shuffle(slots, rng);
      for (std::size_t i = 0; i < missing; ++i) cells[slots[i]] = false;
    }
  }

  // Planted signal carriers among customers with enough present cells.
  std::vector<std::size_t> eligible;
  for (std::size_t u = 0; u < n; ++u) {
    const auto& cells = present[signal_feature][u];
    if (static_cast<int>(std::count(cells.begin(), cells.end(), true)) >= config.signal.min_count)
      eligible.push_back(u);
  }
  if (eligible.size() < plan.signal)
    throw Error(ErrorCode::kInfeasibleConfig, std::to_string(eligible.size()) + " customers can carry the signal, " +
                                                  std::to_string(plan.signal) + " needed");
  shuffle(eligible, rng);
  std::vector<bool> carrier(n, false);
  for (std::size_t i = 0; i < plan.signal; ++i) carrier[eligible[i]] = true;

  std::vector<std::size_t> carriers, plain;
  for (std::size_t u = 0; u < n; ++u) (carrier[u] ? carriers : plain).push_back(u);
  shuffle(carriers, rng);
  shuffle(plain, rng);
  std::vector<int> labels(n);
  for (std::size_t u = 0; u < n; ++u) labels[u] = carrier[u] ? 1 : 0;
  for (std::size_t i = 0; i < plan.flip_signal; ++i) labels[carriers[i]] = 0;
  for (std::size_t i = 0; i < plan.flip_plain; ++i) labels[plain[i]] = 1;

  table.customers.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    auto& c = table.customers[u];
    c.id = "c" + std::to_string(u + 1);
    c.labels = {labels[u]};
    const auto len = static_cast<std::size_t>(lengths[u]);
    const std::int64_t start = kBaseDate + static_cast<std::int64_t>(uniform_index(rng, 365)) * kDay;
    c.records.resize(len);
    for (std::size_t r = 0; r < len; ++r) {
      c.records[r].date = start + static_cast<std::int64_t>(r) * 30 * kDay;
      c.records[r].cells.assign(nf, Missing{});
    }
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& cells = present[f][u];
      const Column col = columns[f];
      auto put = [&](std::size_t r, CellValue v) {
        if (cells[r]) c.records[r].cells[f] = std::move(v);
      };
      switch (col.kind) {
        case 's': {
          const double v = 50.0 + 10.0 * standard_normal(rng);
          for (std::size_t r = 0; r < len; ++r) put(r, v);
          break;
        }
        case 'c': {
          const auto k = uniform_index(rng, kScTokens);
          const std::string token = "sc" + std::to_string(col.index) + "_" + std::to_string(k);
          for (std::size_t r = 0; r < len; ++r) put(r, Token{token});
          break;
        }
        case 'd': {
          double x = 3.0 * standard_normal(rng);
          for (std::size_t r = 0; r < len; ++r) {
            if (r > 0) x += standard_normal(rng);
            put(r, x);
          }
          break;
        }
        case 'e': {
          for (std::size_t r = 0; r < len; ++r)
            put(r, Token{"dc" + std::to_string(col.index) + "_" + std::to_string(uniform_index(rng, kDcTokens))});
          if (f != signal_feature) break;
          std::vector<std::size_t> slots;
          for (std::size_t r = 0; r < len; ++r)
            if (cells[r]) slots.push_back(r);
          shuffle(slots, rng);
          std::size_t planted;
          if (carrier[u]) {
            const std::size_t room = slots.size() - static_cast<std::size_t>(config.signal.min_count);
            planted = static_cast<std::size_t>(config.signal.min_count) + uniform_index(rng, std::min<std::size_t>(room, 1) + 1);
          } else {
            const std::size_t most = std::min<std::size_t>(slots.size(), static_cast<std::size_t>(config.signal.min_count - 1));
            planted = uniform_index(rng, most + 1);
          }
          for (std::size_t i = 0; i < planted; ++i) c.records[slots[i]].cells[f] = Token{config.signal.token};
          break;
        }
      }
    }
  }
  return table;
}

Matrix raw_features(const BigTable& table, const FeatureSchema& schema) {
  schema.check_table(table);
  const BigTable ordered = table.has_date_index ? order_records(table) : table;
  Matrix x(static_cast<Eigen::Index>(ordered.customers.size()), model::augmented_width(schema));
  for (std::size_t i = 0; i < ordered.customers.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = model::augmented_summary(ordered.customers[i], schema).transpose();
  return x;
}

Matrix static_features(const BigTable& table, const FeatureSchema& schema) {
  Eigen::Index width = static_cast<Eigen::Index>(schema.indices(FeatureKind::kStaticNumerical).size());
  for (auto f : schema.indices(FeatureKind::kStaticCategorical))
    width += static_cast<Eigen::Index>(schema.features()[f].vocabulary.size());
  return raw_features(table, schema).leftCols(width);
}

void to_json(nlohmann::json& j, const BaselineConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"test_fraction", c.test_fraction},
                     {"seed", c.seed},
                     {"weighting", c.weighting == AccuracyWeighting::kBalanced ? "balanced" : "class_frequency"}};
}

void from_json(const nlohmann::json& j, BaselineConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.seed = j.value("seed", c.seed);
  if (j.contains("weighting")) {
    const auto w = j.at("weighting").get<std::string>();
    if (w == "balanced") c.weighting = AccuracyWeighting::kBalanced;
    else if (w == "class_frequency") c.weighting = AccuracyWeighting::kClassFrequency;
    else throw Error(ErrorCode::kInvalidConfig, "weighting must be 'balanced' or 'class_frequency'");
  }
}

Eigen::VectorXd LinearClassifier::predict(const Matrix& x) const {
  if (x.cols() != weights.size())
    throw Error(ErrorCode::kShapeMismatch, "classifier expects " + std::to_string(weights.size()) + " columns, got " +
                                               std::to_string(x.cols()));
  Eigen::VectorXd z = ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix() * weights;
  return (1.0 / (1.0 + (-(z.array() + bias)).exp())).matrix();
}

BaselineResult baseline_linear(const Matrix& x, std::span<const int> labels, const BaselineConfig& config) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(x.rows()) + " rows for " +
                                                std::to_string(labels.size()) + " labels");
  if (!(config.test_fraction >= 0 && config.test_fraction < 1) || config.epochs < 0)
    throw Error(ErrorCode::kInvalidConfig, "test_fraction must lie in [0, 1) and epochs >= 0");

  // Stratified split.
  Rng rng = substream(config.seed, "baseline");
  std::vector<std::size_t> train, test;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((labels[i] != 0) == (cls == 1)) rows.push_back(i);
    shuffle(rows, rng);
    const std::size_t k = exact_count(config.test_fraction, rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) (i < k ? test : train).push_back(rows[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  std::vector<int> y_train;
  for (auto i : train) y_train.push_back(labels[i] != 0);
  const auto positives = std::count(y_train.begin(), y_train.end(), 1);
  if (positives == 0 || positives == static_cast<long>(y_train.size()))
    throw Error(ErrorCode::kSingleClassInput, "baseline training split has a single class");

  const Eigen::Index d = x.cols();
  Matrix xt(static_cast<Eigen::Index>(train.size()), d);
  for (std::size_t i = 0; i < train.size(); ++i) xt.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(train[i]));

  LinearClassifier clf;
  clf.mean = xt.colwise().mean();
  clf.scale = ((xt.rowwise() - clf.mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(clf.scale(j) > 1e-12)) clf.scale(j) = 1.0;
  const Matrix standardized = ((xt.rowwise() - clf.mean).array().rowwise() / clf.scale.array()).matrix();

  numeric::ParameterSet params;
  const numeric::Tensor w = params.add("w", Matrix::Zero(d, 1));
  const numeric::Tensor b = params.add("b", Matrix::Zero(1, 1));
  numeric::Adam adam(params, {config.learning_rate});
  const numeric::Tensor input = numeric::Tensor::constant(standardized);
  const numeric::Tensor zero = numeric::Tensor::zeros(input.rows(), 1);
  const double n = static_cast<double>(y_train.size());
  const std::vector<double> weights = {n / (2.0 * (n - static_cast<double>(positives))),
                                       n / (2.0 * static_cast<double>(positives))};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const numeric::Tensor z = numeric::add(numeric::matmul(input, w), b);
    const std::vector<numeric::Tensor> cols = {zero, z};
    const numeric::Tensor loss = numeric::cross_entropy(numeric::concat_cols(cols), y_train, weights);
    params.zero_grad();
    numeric::backward(loss);
    adam.step();
  }
  clf.weights = Eigen::Map<const Eigen::VectorXd>(w.value().data(), d);
  clf.bias = b.value()(0, 0);

  BaselineResult result;
  result.classifier = clf;
  result.train_size = train.size();
  result.test_size = test.size();
  Matrix xs(static_cast<Eigen::Index>(test.size()), d);
  std::vector<int> y_test;
  for (std::size_t i = 0; i < test.size(); ++i) {
    xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(test[i]));
    y_test.push_back(labels[test[i]] != 0);
  }
  const Eigen::VectorXd p = clf.predict(xs);
  result.metrics = evaluate_scores(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), y_test,
                                   config.weighting);
  return result;
}

}  // namespace t2v::eval
