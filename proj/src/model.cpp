#include "table2vec/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "table2vec/error.hpp"
#include "table2vec/metrics.hpp"

namespace t2v::model {

using namespace numeric;

namespace {

constexpr Index kEvalChunk = 256;

// Contiguous bool storage for std::span<const bool> masks.
class BoolMask {
 public:
  explicit BoolMask(std::size_t n) : data_(std::make_unique<bool[]>(n)), size_(n) {}
  bool& operator[](std::size_t i) { return data_[i]; }
  std::span<const bool> span() const { return {data_.get(), size_}; }

 private:
  std::unique_ptr<bool[]> data_;
  std::size_t size_;
};

const CellValue* most_recent(const CustomerRecords& c, std::size_t feature) {
  for (auto it = c.records.rbegin(); it != c.records.rend(); ++it)
    if (!is_missing(it->cells[feature])) return &it->cells[feature];
  return nullptr;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

std::vector<Matrix> snapshot(const ParameterSet& params) {
  std::vector<Matrix> values;
  for (const auto& t : params.tensors()) values.push_back(t.value());
  return values;
}

void restore(ParameterSet& params, const std::vector<Matrix>& values) {
  auto tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i].mutable_value() = values[i];
}

}  // namespace

void ModelConfig::validate() const {
  transformer.validate();
  if (representation_width < 1 || fusion_width < 1 || head_width < 1)
    throw Error(ErrorCode::kInvalidConfig, "model widths must be >= 1");
  if (reconstruction_count < 0 || reconstruction_width < 1)
    throw Error(ErrorCode::kInvalidConfig, "reconstruction count must be >= 0 and width >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"transformer", c.transformer},
                     {"representation_width", c.representation_width},
                     {"fusion_width", c.fusion_width},
                     {"head_width", c.head_width},
                     {"reconstruction_count", c.reconstruction_count},
                     {"reconstruction_width", c.reconstruction_width}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("transformer")) from_json(j.at("transformer"), c.transformer);
  c.representation_width = j.value("representation_width", c.representation_width);
  c.fusion_width = j.value("fusion_width", c.fusion_width);
  c.head_width = j.value("head_width", c.head_width);
  c.reconstruction_count = j.value("reconstruction_count", c.reconstruction_count);
  c.reconstruction_width = j.value("reconstruction_width", c.reconstruction_width);
}

Scalar TrainConfig::task_weight(const std::string& task) const {
  auto it = task_weights.find(task);
  return it == task_weights.end() ? 1.0 : it->second;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::kInvalidConfig, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidConfig, "batch_size must be >= 1");
  if (!(learning_rate > 0)) throw Error(ErrorCode::kInvalidConfig, "learning_rate must be > 0");
  if (!(final_learning_rate_fraction > 0 && final_learning_rate_fraction <= 1))
    throw Error(ErrorCode::kInvalidConfig, "final_learning_rate_fraction must lie in (0, 1]");
  if (reconstruction_weight < 0) throw Error(ErrorCode::kInvalidConfig, "reconstruction_weight must be >= 0");
  for (const auto& [name, w] : task_weights)
    if (w < 0) throw Error(ErrorCode::kInvalidConfig, "task weight of '" + name + "' must be >= 0");
  if (validation_fraction < 0 || validation_fraction > 0.5)
    throw Error(ErrorCode::kInvalidConfig, "validation_fraction must lie in [0, 0.5]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"final_learning_rate_fraction", c.final_learning_rate_fraction},
                     {"reconstruction_weight", c.reconstruction_weight},
                     {"task_weights", c.task_weights},
                     {"validation_fraction", c.validation_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.final_learning_rate_fraction = j.value("final_learning_rate_fraction", c.final_learning_rate_fraction);
  c.reconstruction_weight = j.value("reconstruction_weight", c.reconstruction_weight);
  if (j.contains("task_weights")) c.task_weights = j.at("task_weights").get<std::map<std::string, Scalar>>();
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.seed = j.value("seed", c.seed);
}

ReconstructionSpec ReconstructionSpec::generate(int count, Index input_width, Index width, std::uint64_t seed) {
  ReconstructionSpec spec;
  spec.count = count;
  spec.width = width;
  spec.seed = seed;
  Rng rng = substream(seed, "reconstruction");
  const Scalar sd = 1.0 / std::sqrt(static_cast<Scalar>(std::max<Index>(input_width, 1)));
  for (int r = 0; r < count; ++r) {
    Matrix g(input_width, width);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = sd * standard_normal(rng);
    spec.projections.push_back(std::move(g));
  }
  return spec;
}

std::vector<Matrix> reconstruction_targets(const ReconstructionSpec& spec, const Matrix& x_aug) {
  std::vector<Matrix> targets;
  for (const auto& g : spec.projections) {
    if (g.rows() != x_aug.cols())
      throw Error(ErrorCode::kShapeMismatch, "summary width " + std::to_string(x_aug.cols()) +
                                                 " vs projection rows " + std::to_string(g.rows()));
    targets.push_back(x_aug * g);
  }
  return targets;
}

Index augmented_width(const FeatureSchema& schema) {
  Index w = static_cast<Index>(schema.indices(FeatureKind::kStaticNumerical).size() +
                               schema.indices(FeatureKind::kDynamicNumerical).size() +
                               schema.indices(FeatureKind::kDynamicCategorical).size());
  for (auto f : schema.indices(FeatureKind::kStaticCategorical))
    w += static_cast<Index>(schema.features()[f].vocabulary.size());
  return w;
}

Eigen::VectorXd augmented_summary(const CustomerRecords& customer, const FeatureSchema& schema) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(augmented_width(schema));
  Index at = 0;
  for (auto f : schema.indices(FeatureKind::kStaticNumerical)) {
    if (const CellValue* v = most_recent(customer, f)) x(at) = schema.numeric_value(f, *v);
    ++at;
  }
  for (auto f : schema.indices(FeatureKind::kStaticCategorical)) {
    const CellValue* v = most_recent(customer, f);
    x(at + (v ? schema.token_id(f, *v) : Vocabulary::kMissingId)) = 1.0;
    at += static_cast<Index>(schema.features()[f].vocabulary.size());
  }
  for (auto f : schema.indices(FeatureKind::kDynamicNumerical)) {
    double total = 0;
    int present = 0;
    for (const auto& r : customer.records)
      if (!is_missing(r.cells[f])) {
        total += schema.numeric_value(f, r.cells[f]);
        ++present;
      }
    x(at++) = present ? total / present : 0.0;
  }
  for (auto f : schema.indices(FeatureKind::kDynamicCategorical)) {
    const std::size_t n = customer.records.size();
    double changes = 0;
    for (std::size_t i = 1; i < n; ++i)
      changes += schema.token_id(f, customer.records[i].cells[f]) !=
                 schema.token_id(f, customer.records[i - 1].cells[f]);
    x(at++) = n > 1 ? changes / static_cast<double>(n - 1) : 0.0;
  }
  return x;
}

Tensor joint_loss(const LossTerms& terms, const LossWeights& weights) {
  bool enabled = weights.reconstruction > 0 && !terms.reconstruction.empty();
  if (weights.tasks.size() != terms.tasks.size())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(weights.tasks.size()) + " task weights for " +
                                                std::to_string(terms.tasks.size()) + " task terms");
  for (Scalar w : weights.tasks) enabled = enabled || w > 0;
  if (!enabled) throw Error(ErrorCode::kAllTermsDisabled, "every loss term has zero weight");

  Tensor total = Tensor::scalar(0.0);
  if (weights.reconstruction > 0)
    for (const auto& r : terms.reconstruction) total = add(total, scale(r, weights.reconstruction));
  for (std::size_t t = 0; t < terms.tasks.size(); ++t)
    if (weights.tasks[t] > 0) total = add(total, scale(terms.tasks[t], weights.tasks[t]));
  if (terms.penalty.defined()) total = add(total, terms.penalty);
  return total;
}

Table2VecModel Table2VecModel::create(FeatureSchema schema, std::vector<TaskSpec> tasks, ModelConfig config,
                                      std::uint64_t seed) {
  config.validate();
  Table2VecModel m;
  m.schema_ = std::move(schema);
  m.config_ = std::move(config);
  m.tasks_ = std::move(tasks);
  m.seed_ = seed;
  Rng rng = substream(seed, "init");
  m.build(rng);
  m.reconstruction_ = ReconstructionSpec::generate(m.config_.reconstruction_count, augmented_width(m.schema_),
                                                   m.config_.reconstruction_width, seed);
  return m;
}

bool Table2VecModel::has_branch(Branch b) const {
  static constexpr FeatureKind kinds[4] = {FeatureKind::kStaticCategorical, FeatureKind::kStaticNumerical,
                                           FeatureKind::kDynamicCategorical, FeatureKind::kDynamicNumerical};
  return !schema_.indices(kinds[b]).empty();
}

void Table2VecModel::build(Rng& rng) {
  const Index d = config_.transformer.width;
  // Embedding rows start at unit scale so token identity is not swamped by
  // the coordinate code added inside the dynamics block.
  auto normal = [&](const std::string& name, Index rows) {
    Matrix m(rows, d);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
    return params_.add(name, std::move(m));
  };
  auto tables = [&](FeatureKind kind, const std::string& prefix, embed::EmbeddingBank& bank) {
    bank.width = d;
    for (auto f : schema_.indices(kind))
      bank.categorical.push_back(normal(prefix + "." + schema_.features()[f].name,
                                        static_cast<Index>(schema_.features()[f].vocabulary.size())));
  };
  auto positions = [&](FeatureKind kind, const std::string& name, embed::EmbeddingBank& bank) {
    bank.width = d;
    bank.numeric = normal(name, static_cast<Index>(schema_.indices(kind).size()));
  };

  Index branches = 0;
  if (has_branch(kCs)) tables(FeatureKind::kStaticCategorical, "cs", cs_bank_), ++branches;
  if (has_branch(kNs)) positions(FeatureKind::kStaticNumerical, "ns", ns_bank_), ++branches;
  if (has_branch(kCd)) {
    tables(FeatureKind::kDynamicCategorical, "cd", cd_bank_);
    cd_block_ = dynamics::TransformerParams::create(params_, "cd.block", config_.transformer, rng);
    ++branches;
  }
  if (has_branch(kNd)) {
    positions(FeatureKind::kDynamicNumerical, "nd", nd_bank_);
    nd_block_ = dynamics::TransformerParams::create(params_, "nd.block", config_.transformer, rng);
    ++branches;
  }
  if (branches == 0) throw Error(ErrorCode::kInvalidConfig, "schema has no embeddable feature");

  const Index in = branches * (d + 1);
  fusion_w1_ = params_.add_affine_weight("fusion.w1", in, config_.fusion_width, rng);
  fusion_b1_ = params_.add_constant_init("fusion.b1", 1, config_.fusion_width, 0.0);
  fusion_w2_ = params_.add_affine_weight("fusion.w2", config_.fusion_width, config_.representation_width, rng);
  fusion_b2_ = params_.add_constant_init("fusion.b2", 1, config_.representation_width, 0.0);
  for (int r = 0; r < config_.reconstruction_count; ++r) {
    const std::string p = "reconstruction." + std::to_string(r);
    recon_w_.push_back(
        params_.add_affine_weight(p + ".w", config_.representation_width, config_.reconstruction_width, rng));
    recon_b_.push_back(params_.add_constant_init(p + ".b", 1, config_.reconstruction_width, 0.0));
  }
  for (const auto& task : tasks_) {
    const std::string p = "task." + task.name;
    Head h;
    h.w1 = params_.add_affine_weight(p + ".w1", config_.representation_width, config_.head_width, rng);
    h.b1 = params_.add_constant_init(p + ".b1", 1, config_.head_width, 0.0);
    h.w2 = params_.add_affine_weight(p + ".w2", config_.head_width, task.classes, rng);
    h.b2 = params_.add_constant_init(p + ".b2", 1, task.classes, 0.0);
    heads_.push_back(std::move(h));
  }
}

std::size_t Table2VecModel::task_index(const std::string& name) const {
  for (std::size_t t = 0; t < tasks_.size(); ++t)
    if (tasks_[t].name == name) return t;
  throw Error(ErrorCode::kUnknownTask, "model has no task '" + name + "'");
}

EncodedCustomer Table2VecModel::encode(const CustomerRecords& customer) const {
  const std::size_t nf = schema_.features().size();
  for (const auto& r : customer.records)
    if (r.cells.size() != nf)
      throw Error(ErrorCode::kSchemaMismatch, "customer '" + customer.id + "' has a record of " +
                                                  std::to_string(r.cells.size()) + " cells, schema has " +
                                                  std::to_string(nf) + " features");
  const Index len = config_.transformer.max_len;
  EncodedCustomer e;
  e.id = customer.id;
  for (auto f : schema_.indices(FeatureKind::kStaticCategorical)) {
    const CellValue* v = most_recent(customer, f);
    e.cs_ids.push_back(v ? schema_.token_id(f, *v) : Vocabulary::kMissingId);
    e.presence[kCs] = e.presence[kCs] || v;
  }
  for (auto f : schema_.indices(FeatureKind::kStaticNumerical)) {
    const CellValue* v = most_recent(customer, f);
    e.ns_values.push_back(v ? schema_.numeric_value(f, *v) : 0.0);
    e.presence[kNs] = e.presence[kNs] || v;
  }

  const std::size_t n = customer.records.size();
  const std::size_t start = n > static_cast<std::size_t>(len) ? n - static_cast<std::size_t>(len) : 0;
  e.steps = std::max<Index>(1, static_cast<Index>(n - start));
  const auto& cd = schema_.indices(FeatureKind::kDynamicCategorical);
  const auto& nd = schema_.indices(FeatureKind::kDynamicNumerical);
  e.cd_ids.assign(cd.size(), std::vector<int>(static_cast<std::size_t>(len), Vocabulary::kMissingId));
  e.nd_values = Matrix::Zero(len, static_cast<Index>(nd.size()));
  for (std::size_t i = start; i < n; ++i) {
    const auto& cells = customer.records[i].cells;
    const std::size_t p = i - start;
    for (std::size_t j = 0; j < cd.size(); ++j) {
      e.cd_ids[j][p] = schema_.token_id(cd[j], cells[cd[j]]);
      e.presence[kCd] = e.presence[kCd] || !is_missing(cells[cd[j]]);
    }
    for (std::size_t j = 0; j < nd.size(); ++j) {
      e.nd_values(static_cast<Index>(p), static_cast<Index>(j)) = schema_.numeric_value(nd[j], cells[nd[j]]);
      e.presence[kNd] = e.presence[kNd] || !is_missing(cells[nd[j]]);
    }
  }
  e.x_aug = augmented_summary(customer, schema_);
  e.labels.assign(tasks_.size(), -1);
  if (customer.labels.size() == tasks_.size())
    for (std::size_t t = 0; t < tasks_.size(); ++t)
      if (customer.labels[t]) e.labels[t] = *customer.labels[t];
  return e;
}

std::vector<EncodedCustomer> Table2VecModel::encode(const BigTable& table) const {
  schema_.check_table(table);
  const BigTable ordered = table.has_date_index ? order_records(table) : table;
  std::vector<int> column(tasks_.size(), -1);
  for (std::size_t t = 0; t < tasks_.size(); ++t)
    if (auto i = ordered.task_index(tasks_[t].name)) column[t] = static_cast<int>(*i);
  std::vector<EncodedCustomer> out;
  out.reserve(ordered.customers.size());
  for (const auto& c : ordered.customers) {
    EncodedCustomer e = encode(c);
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const int col = column[t];
      e.labels[t] = col >= 0 && c.labels[static_cast<std::size_t>(col)] ? *c.labels[static_cast<std::size_t>(col)]
                                                                          : -1;
    }
    out.push_back(std::move(e));
  }
  return out;
}

ForwardOutput Table2VecModel::forward(std::span<const EncodedCustomer* const> batch, bool training,
                                      Rng* rng) const {
  const Index b = static_cast<Index>(batch.size());
  if (b == 0) throw Error(ErrorCode::kEmptyTable, "forward over an empty batch");
  const Index len = config_.transformer.max_len;
  ForwardOutput out;
  out.penalty = Tensor::scalar(0.0);
  std::vector<Tensor> parts;
  std::vector<Branch> present;
  int dynamic_branches = 0;

  auto presence_column = [&](Branch br) {
    Matrix p(b, 1);
    for (Index i = 0; i < b; ++i) p(i, 0) = batch[static_cast<std::size_t>(i)]->presence[br] ? 1.0 : 0.0;
    return Tensor::constant(std::move(p));
  };

  auto run_dynamic = [&](const Tensor& e0, const dynamics::TransformerParams& block, Branch br) {
    BoolMask mask(static_cast<std::size_t>(b * len));
    for (Index i = 0; i < b; ++i)
      for (Index p = 0; p < len; ++p)
        mask[static_cast<std::size_t>(i * len + p)] = p < batch[static_cast<std::size_t>(i)]->steps;
    auto act = dynamics::act_run(e0, block, config_.transformer, mask.span(), b, training, rng);
    out.penalty = add(out.penalty, act.penalty);
    out.mean_steps += act.mean_steps;
    ++dynamic_branches;
    parts.push_back(mul(dynamics::dynamic_embed(act.state, block.mixer, b), presence_column(br)));
    present.push_back(br);
  };

  if (has_branch(kCs)) {
    std::vector<std::vector<int>> ids(cs_bank_.categorical.size(), std::vector<int>(static_cast<std::size_t>(b)));
    for (std::size_t j = 0; j < ids.size(); ++j)
      for (std::size_t i = 0; i < batch.size(); ++i) ids[j][i] = batch[i]->cs_ids[j];
    parts.push_back(mul(embed::categorical_embed_max(ids, cs_bank_.categorical), presence_column(kCs)));
    present.push_back(kCs);
  }
  if (has_branch(kNs)) {
    Matrix values(b, ns_bank_.numeric.rows());
    for (Index i = 0; i < b; ++i)
      for (Index j = 0; j < values.cols(); ++j)
        values(i, j) = batch[static_cast<std::size_t>(i)]->ns_values[static_cast<std::size_t>(j)];
    parts.push_back(mul(embed::numeric_embed_max(values, ns_bank_.numeric), presence_column(kNs)));
    present.push_back(kNs);
  }
  if (has_branch(kCd)) {
    std::vector<std::vector<int>> ids(cd_bank_.categorical.size(),
                                      std::vector<int>(static_cast<std::size_t>(b * len)));
    for (std::size_t j = 0; j < ids.size(); ++j)
      for (std::size_t i = 0; i < batch.size(); ++i)
        std::copy(batch[i]->cd_ids[j].begin(), batch[i]->cd_ids[j].end(),
                  ids[j].begin() + static_cast<std::ptrdiff_t>(i) * len);
    run_dynamic(embed::categorical_embed_max(ids, cd_bank_.categorical), *cd_block_, kCd);
  }
  if (has_branch(kNd)) {
    Matrix values(b * len, nd_bank_.numeric.rows());
    for (Index i = 0; i < b; ++i) values.middleRows(i * len, len) = batch[static_cast<std::size_t>(i)]->nd_values;
    run_dynamic(embed::numeric_embed_max(values, nd_bank_.numeric), *nd_block_, kNd);
  }
  if (dynamic_branches) out.mean_steps /= dynamic_branches;
  for (Branch br : present) parts.push_back(presence_column(br));

  const Tensor fused = concat_cols(parts);
  const Tensor hidden = relu(affine(fused, fusion_w1_, fusion_b1_));
  out.representation = affine(hidden, fusion_w2_, fusion_b2_);
  return out;
}

Tensor Table2VecModel::reconstruct(const Tensor& representation, int r) const {
  return affine(representation, recon_w_.at(static_cast<std::size_t>(r)), recon_b_.at(static_cast<std::size_t>(r)));
}

Tensor Table2VecModel::logits(const Tensor& representation, std::size_t task) const {
  const Head& h = heads_.at(task);
  return affine(relu(affine(representation, h.w1, h.b1)), h.w2, h.b2);
}

LossTerms Table2VecModel::loss_terms(std::span<const EncodedCustomer* const> batch,
                                     const std::vector<std::vector<Scalar>>& class_weights, bool training,
                                     Rng* rng) const {
  const ForwardOutput f = forward(batch, training, rng);
  LossTerms terms;
  terms.penalty = f.penalty;
  if (config_.reconstruction_count > 0) {
    Matrix x(static_cast<Index>(batch.size()), augmented_width(schema_));
    for (std::size_t i = 0; i < batch.size(); ++i) x.row(static_cast<Index>(i)) = batch[i]->x_aug.transpose();
    const auto targets = reconstruction_targets(reconstruction_, x);
    for (int r = 0; r < config_.reconstruction_count; ++r)
      terms.reconstruction.push_back(
          mse(reconstruct(f.representation, r), Tensor::constant(targets[static_cast<std::size_t>(r)])));
  }
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    std::vector<int> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i]->labels[t];
    const std::span<const Scalar> w =
        t < class_weights.size() ? std::span<const Scalar>(class_weights[t]) : std::span<const Scalar>();
    terms.tasks.push_back(cross_entropy(logits(f.representation, t), labels, w));
  }
  return terms;
}

Matrix Table2VecModel::represent(std::span<const EncodedCustomer> customers) const {
  Matrix out(static_cast<Index>(customers.size()), config_.representation_width);
  for (std::size_t start = 0; start < customers.size(); start += kEvalChunk) {
    const std::size_t end = std::min(customers.size(), start + kEvalChunk);
    std::vector<const EncodedCustomer*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&customers[i]);
    out.middleRows(static_cast<Index>(start), static_cast<Index>(end - start)) =
        forward(batch).representation.value();
  }
  return out;
}

Matrix Table2VecModel::predict(std::span<const EncodedCustomer> customers, const std::string& task) const {
  const std::size_t t = task_index(task);
  Matrix out(static_cast<Index>(customers.size()), tasks_[t].classes);
  for (std::size_t start = 0; start < customers.size(); start += kEvalChunk) {
    const std::size_t end = std::min(customers.size(), start + kEvalChunk);
    std::vector<const EncodedCustomer*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&customers[i]);
    out.middleRows(static_cast<Index>(start), static_cast<Index>(end - start)) =
        softmax(logits(forward(batch).representation, t)).value();
  }
  return out;
}

nlohmann::json Table2VecModel::to_json() const {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : tasks_) tasks.push_back({{"name", t.name}, {"classes", t.classes}});
  nlohmann::json projections = nlohmann::json::array();
  for (const auto& g : reconstruction_.projections)
    projections.push_back(std::vector<Scalar>(g.data(), g.data() + g.size()));
  return {{"format", "table2vec-model"},
          {"version", 1},
          {"seed", seed_},
          {"schema", schema_},
          {"config", config_},
          {"tasks", tasks},
          {"reconstruction",
           {{"count", reconstruction_.count},
            {"width", reconstruction_.width},
            {"seed", reconstruction_.seed},
            {"projections", projections}}},
          {"params", params_.to_json()}};
}

Table2VecModel Table2VecModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "table2vec-model" || j.at("version") != 1)
      throw Error(ErrorCode::kSchema, "not a version 1 table2vec model checkpoint");
    Table2VecModel m;
    m.schema_ = j.at("schema").get<FeatureSchema>();
    m.config_ = j.at("config").get<ModelConfig>();
    m.config_.validate();
    m.seed_ = j.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("tasks")) m.tasks_.push_back({t.at("name"), t.at("classes")});
    Rng rng = substream(m.seed_, "init");
    m.build(rng);
    m.params_.load_json(j.at("params"));

    const auto& rec = j.at("reconstruction");
    m.reconstruction_.count = rec.at("count");
    m.reconstruction_.width = rec.at("width");
    m.reconstruction_.seed = rec.at("seed");
    const Index in = augmented_width(m.schema_);
    for (const auto& values : rec.at("projections")) {
      const auto v = values.get<std::vector<Scalar>>();
      if (static_cast<Index>(v.size()) != in * m.reconstruction_.width)
        throw Error(ErrorCode::kSchema, "reconstruction projection has the wrong size");
      m.reconstruction_.projections.push_back(
          Eigen::Map<const Matrix>(v.data(), in, m.reconstruction_.width));
    }
    if (static_cast<int>(m.reconstruction_.projections.size()) != m.config_.reconstruction_count)
      throw Error(ErrorCode::kSchema, "reconstruction projection count differs from the config");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("malformed model checkpoint: ") + e.what());
  }
}

void Table2VecModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  out << to_json().dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "failed writing '" + path + "'");
}

Table2VecModel Table2VecModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, "'" + path + "' is not JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json auc = nlohmann::json::object();
  for (const auto& [task, value] : e.validation_auc) auc[task] = value ? nlohmann::json(*value) : nlohmann::json();
  return {{"epoch", e.epoch},
          {"train_loss", e.train_loss},
          {"validation_loss", e.validation_loss},
          {"validation_auc", auc}};
}

std::vector<TaskSpec> infer_tasks(const BigTable& table) {
  std::vector<TaskSpec> tasks;
  for (std::size_t t = 0; t < table.tasks.size(); ++t) {
    int top = 1;
    for (const auto& c : table.customers)
      if (c.labels[t]) top = std::max(top, *c.labels[t]);
    tasks.push_back({table.tasks[t], top + 1});
  }
  return tasks;
}

std::vector<std::vector<Scalar>> class_weights(std::span<const EncodedCustomer> customers,
                                               const std::vector<TaskSpec>& tasks) {
  std::vector<std::vector<Scalar>> weights;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    std::vector<Scalar> counts(static_cast<std::size_t>(tasks[t].classes), 0.0);
    Scalar labeled = 0;
    for (const auto& c : customers)
      if (c.labels[t] >= 0 && c.labels[t] < tasks[t].classes) {
        counts[static_cast<std::size_t>(c.labels[t])] += 1;
        labeled += 1;
      }
    std::vector<Scalar> w(counts.size(), 1.0);
    for (std::size_t k = 0; k < counts.size(); ++k)
      if (counts[k] > 0) w[k] = labeled / (static_cast<Scalar>(counts.size()) * counts[k]);
    weights.push_back(std::move(w));
  }
  return weights;
}

namespace {

struct Evaluation {
  Scalar loss = 0;
  std::vector<std::pair<std::string, std::optional<Scalar>>> auc;
};

Evaluation evaluate(const Table2VecModel& model, const std::vector<const EncodedCustomer*>& customers,
                    const std::vector<std::vector<Scalar>>& weights, const LossWeights& loss_weights) {
  Evaluation ev;
  const auto& tasks = model.tasks();
  std::vector<std::vector<double>> scores(tasks.size());
  std::vector<std::vector<int>> labels(tasks.size());
  Scalar total = 0;
  for (std::size_t start = 0; start < customers.size(); start += kEvalChunk) {
    const std::size_t end = std::min(customers.size(), start + kEvalChunk);
    const std::span<const EncodedCustomer* const> batch(customers.data() + start, end - start);
    const ForwardOutput f = model.forward(batch);
    LossTerms terms;
    terms.penalty = f.penalty;
    if (model.config().reconstruction_count > 0) {
      Matrix x(static_cast<Index>(batch.size()), augmented_width(model.schema()));
      for (std::size_t i = 0; i < batch.size(); ++i) x.row(static_cast<Index>(i)) = batch[i]->x_aug.transpose();
      const auto targets = reconstruction_targets(model.reconstruction(), x);
      for (int r = 0; r < model.config().reconstruction_count; ++r)
        terms.reconstruction.push_back(mse(model.reconstruct(f.representation, r),
                                           Tensor::constant(targets[static_cast<std::size_t>(r)])));
    }
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = batch[i]->labels[t];
      const Tensor logits = model.logits(f.representation, t);
      terms.tasks.push_back(cross_entropy(logits, y, weights[t]));
      const Matrix p = softmax(logits).value();
      for (std::size_t i = 0; i < batch.size(); ++i)
        if (y[i] >= 0) {
          scores[t].push_back(1.0 - p(static_cast<Index>(i), 0));
          labels[t].push_back(y[i] != 0);
        }
    }
    total += joint_loss(terms, loss_weights).item() * static_cast<Scalar>(batch.size());
  }
  ev.loss = total / static_cast<Scalar>(std::max<std::size_t>(customers.size(), 1));
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const bool both = std::count(labels[t].begin(), labels[t].end(), 1) > 0 &&
                      std::count(labels[t].begin(), labels[t].end(), 0) > 0;
    ev.auc.emplace_back(tasks[t].name, both ? std::optional<Scalar>(eval::auc(scores[t], labels[t])) : std::nullopt);
  }
  return ev;
}

}  // namespace

TrainResult train(const BigTable& table, const FeatureSchema& schema, const ModelConfig& model_config,
                  const TrainConfig& config) {
  config.validate();
  const auto tasks = infer_tasks(table);
  TrainResult result{Table2VecModel::create(schema, tasks, model_config, config.seed), {}, 0};
  Table2VecModel& model = result.model;
  const auto customers = model.encode(table);
  if (customers.empty()) throw Error(ErrorCode::kEmptyTable, "table has no customers");

  LossWeights loss_weights;
  loss_weights.reconstruction = model_config.reconstruction_count > 0 ? config.reconstruction_weight : 0.0;
  bool labeled = false;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    loss_weights.tasks.push_back(config.task_weight(tasks[t].name));
    if (loss_weights.tasks.back() > 0)
      for (const auto& c : customers) labeled = labeled || c.labels[t] >= 0;
  }
  if (!labeled && loss_weights.reconstruction == 0)
    throw Error(ErrorCode::kNoLabeledCustomers, "no labeled customer for any weighted task and no reconstruction");

  std::vector<std::size_t> order(customers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split = substream(config.seed, "split");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(split, i)]);
  const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction *
                                                         static_cast<Scalar>(customers.size())));
  std::vector<const EncodedCustomer*> validation, training;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? validation : training).push_back(&customers[order[i]]);
  const auto& held_out = validation.empty() ? training : validation;

  std::vector<EncodedCustomer> train_view;
  for (const auto* c : training) train_view.push_back(*c);
  const auto weights = class_weights(train_view, tasks);

  if (config.epochs == 0) return result;

  Adam adam(model.params(), {config.learning_rate});
  Rng batches = substream(config.seed, "batches");
  Rng noise = substream(config.seed, "dropout");
  Scalar best = evaluate(model, held_out, weights, loss_weights).loss;
  std::vector<Matrix> best_values = snapshot(model.params());

  const Scalar floor = config.final_learning_rate_fraction;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const Scalar progress = config.epochs > 1 ? static_cast<Scalar>(epoch - 1) / (config.epochs - 1) : 0.0;
    adam.set_learning_rate(config.learning_rate * (floor + (1 - floor) * 0.5 * (1 + std::cos(M_PI * progress))));
    std::vector<const EncodedCustomer*> shuffled = training;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[uniform_index(batches, i)]);
    Scalar total = 0;
    for (std::size_t start = 0; start < shuffled.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(shuffled.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const EncodedCustomer* const> batch(shuffled.data() + start, end - start);
      const Tensor loss = joint_loss(model.loss_terms(batch, weights, true, &noise), loss_weights);
      model.params().zero_grad();
      backward(loss);
      adam.step();
      total += loss.item() * static_cast<Scalar>(batch.size());
    }
    const Evaluation ev = evaluate(model, held_out, weights, loss_weights);
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = total / static_cast<Scalar>(shuffled.size());
    row.validation_loss = ev.loss;
    row.validation_auc = ev.auc;
    result.log.push_back(row);
    if (ev.loss < best) {
      best = ev.loss;
      best_values = snapshot(model.params());
      result.best_epoch = epoch;
    }
  }
  restore(model.params(), best_values);
  return result;
}

}  // namespace t2v::model
