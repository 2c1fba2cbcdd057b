#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "table2vec/dynamics.hpp"
#include "table2vec/embed.hpp"
#include "table2vec/numeric/optim.hpp"
#include "table2vec/prep.hpp"

namespace t2v::model {

using numeric::Index;
using numeric::Matrix;
using numeric::Scalar;
using numeric::Tensor;

struct ModelConfig {
  dynamics::TransformerConfig transformer;  // width doubles as the embedding width
  Index representation_width = 32;          // r
  Index fusion_width = 64;
  Index head_width = 32;
  int reconstruction_count = 3;     // R
  Index reconstruction_width = 16;  // d_rec

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct TrainConfig {
  int epochs = 30;
  Index batch_size = 64;
  Scalar learning_rate = 3e-3;
  Scalar final_learning_rate_fraction = 0.5;  // cosine decay target
  Scalar reconstruction_weight = 0.5;     // lambda_rec
  std::map<std::string, Scalar> task_weights;  // absent tasks weigh 1
  Scalar validation_fraction = 0.2;
  std::uint64_t seed = 0;

  Scalar task_weight(const std::string& task) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Frozen random projections G_r (x_aug width x d_rec) used as
// reconstruction targets. Never registered with the optimiser.
struct ReconstructionSpec {
  int count = 0;
  Index width = 0;
  std::uint64_t seed = 0;
  std::vector<Matrix> projections;

  static ReconstructionSpec generate(int count, Index input_width, Index width, std::uint64_t seed);
};

// target_r = G_r^T x_aug, one row per customer: x_aug is batch x input width.
std::vector<Matrix> reconstruction_targets(const ReconstructionSpec& spec, const Matrix& x_aug);

struct TaskSpec {
  std::string name;
  int classes = 2;
};

enum Branch { kCs = 0, kNs = 1, kCd = 2, kNd = 3 };

// Model-ready view of one customer's records.
struct EncodedCustomer {
  std::string id;
  std::vector<int> cs_ids;         // most recent non-missing value per CS feature
  std::vector<double> ns_values;   // normalised, imputed
  Index steps = 1;                 // valid dynamic positions, <= max_len
  std::vector<std::vector<int>> cd_ids;  // [feature][position], padded with 0
  Matrix nd_values;                // max_len x ND features, padded with 0
  std::array<bool, 4> presence{};  // any non-missing cell per branch
  Eigen::VectorXd x_aug;
  std::vector<int> labels;         // per task, -1 when absent
};

// Fixed model-free summary: SN values, SC one-hot codes, DN time means of
// present values and DC change rates.
Eigen::VectorXd augmented_summary(const CustomerRecords& customer, const FeatureSchema& schema);
Index augmented_width(const FeatureSchema& schema);

struct ForwardOutput {
  Tensor representation;  // batch x r
  Tensor penalty;         // 1 x 1 ponder penalty summed over dynamic branches
  Scalar mean_steps = 0;
};

// Per-term losses before weighting.
struct LossTerms {
  std::vector<Tensor> reconstruction;  // MSE per random mapping
  std::vector<Tensor> tasks;           // class-weighted cross-entropy per task
  Tensor penalty;                      // ponder penalty, already scaled by tau
};

struct LossWeights {
  Scalar reconstruction = 0.5;
  std::vector<Scalar> tasks;
};

// lambda_rec * sum MSE + sum w_t * CE_t + penalty. Throws kAllTermsDisabled
// when no reconstruction or task term carries weight.
Tensor joint_loss(const LossTerms& terms, const LossWeights& weights);

class Table2VecModel {
 public:
  static Table2VecModel create(FeatureSchema schema, std::vector<TaskSpec> tasks, ModelConfig config,
                               std::uint64_t seed);

  Table2VecModel(Table2VecModel&&) = default;
  Table2VecModel& operator=(Table2VecModel&&) = default;
  Table2VecModel(const Table2VecModel&) = delete;
  Table2VecModel& operator=(const Table2VecModel&) = delete;

  const FeatureSchema& schema() const { return schema_; }
  const ModelConfig& config() const { return config_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const ReconstructionSpec& reconstruction() const { return reconstruction_; }
  std::uint64_t seed() const { return seed_; }
  numeric::ParameterSet& params() { return params_; }
  const numeric::ParameterSet& params() const { return params_; }
  bool has_branch(Branch b) const;

  std::size_t task_index(const std::string& name) const;  // kUnknownTask

  // Records must be date-ordered and follow the schema's feature order.
  EncodedCustomer encode(const CustomerRecords& customer) const;
  // Checks the table against the schema (kSchemaMismatch) and orders it.
  std::vector<EncodedCustomer> encode(const BigTable& table) const;

  ForwardOutput forward(std::span<const EncodedCustomer* const> batch, bool training = false,
                        Rng* rng = nullptr) const;
  Tensor reconstruct(const Tensor& representation, int r) const;
  Tensor logits(const Tensor& representation, std::size_t task) const;

  LossTerms loss_terms(std::span<const EncodedCustomer* const> batch,
                       const std::vector<std::vector<Scalar>>& class_weights, bool training = false,
                       Rng* rng = nullptr) const;

  // Evaluation-mode helpers over many customers, computed in fixed chunks.
  Matrix represent(std::span<const EncodedCustomer> customers) const;
  Matrix predict(std::span<const EncodedCustomer> customers, const std::string& task) const;

  nlohmann::json to_json() const;
  static Table2VecModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Table2VecModel load(const std::string& path);

 private:
  Table2VecModel() = default;
  void build(Rng& rng);

  FeatureSchema schema_;
  ModelConfig config_;
  std::vector<TaskSpec> tasks_;
  std::uint64_t seed_ = 0;
  ReconstructionSpec reconstruction_;

  numeric::ParameterSet params_;
  embed::EmbeddingBank cs_bank_, ns_bank_, cd_bank_, nd_bank_;
  std::optional<dynamics::TransformerParams> cd_block_, nd_block_;
  Tensor fusion_w1_, fusion_b1_, fusion_w2_, fusion_b2_;
  std::vector<Tensor> recon_w_, recon_b_;
  struct Head {
    Tensor w1, b1, w2, b2;
  };
  std::vector<Head> heads_;
};

struct EpochLog {
  int epoch = 0;
  Scalar train_loss = 0;
  Scalar validation_loss = 0;
  std::vector<std::pair<std::string, std::optional<Scalar>>> validation_auc;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainResult {
  Table2VecModel model;
  std::vector<EpochLog> log;
  int best_epoch = 0;  // 0 when the initial model was kept
};

// Tasks are the table's label columns; classes = largest label + 1 (>= 2).
std::vector<TaskSpec> infer_tasks(const BigTable& table);

// Inverse-frequency class weights over labeled customers, normalised so a
// balanced task gets weight 1 per class.
std::vector<std::vector<Scalar>> class_weights(std::span<const EncodedCustomer> customers,
                                               const std::vector<TaskSpec>& tasks);

TrainResult train(const BigTable& table, const FeatureSchema& schema, const ModelConfig& model_config,
                  const TrainConfig& config);

}  // namespace t2v::model
