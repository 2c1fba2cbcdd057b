#include <cmath>

#include "doctest.h"
#include "table2vec/error.hpp"
#include "table2vec/model.hpp"
#include "test_support.hpp"

using namespace t2v;
using namespace t2v::model;
using t2v::testing::small_model;
using t2v::testing::small_synth;

namespace {

struct Fixture {
  BigTable table;
  FeatureSchema schema;
  std::vector<TaskSpec> tasks;
};

Fixture fixture(std::size_t customers, std::uint64_t seed) {
  Fixture f;
  f.table = order_records(eval::synth_generate(small_synth(customers, seed)));
  f.schema = build_schema(f.table, {});
  f.tasks = infer_tasks(f.table);
  return f;
}

std::vector<const EncodedCustomer*> pointers(const std::vector<EncodedCustomer>& c, std::size_t n) {
  std::vector<const EncodedCustomer*> out;
  for (std::size_t i = 0; i < std::min(n, c.size()); ++i) out.push_back(&c[i]);
  return out;
}

double reconstruction_mse(const Table2VecModel& m, const std::vector<EncodedCustomer>& enc) {
  const auto batch = pointers(enc, enc.size());
  const auto weights = class_weights(enc, m.tasks());
  const LossTerms terms = m.loss_terms(batch, weights);
  double total = 0;
  for (const auto& t : terms.reconstruction) total += t.item();
  return total;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("forward shape, determinism and the all-missing customer") {
    const Fixture f = fixture(60, 1);
    const auto m = Table2VecModel::create(f.schema, f.tasks, ModelConfig{}, 7);
    const auto enc = m.encode(f.table);
    const Matrix a = m.represent(enc);
    CHECK(a.rows() == 60);
    CHECK(a.cols() == 32);
    CHECK(m.represent(enc) == a);

    CustomerRecords blank{"blank", {}, {std::nullopt}};
    for (int r = 0; r < 3; ++r)
      blank.records.push_back(Record{std::vector<CellValue>(f.table.features.size(), Missing{}), r * 86400});
    const std::vector<EncodedCustomer> one = {m.encode(blank)};
    const Matrix v = m.represent(one);
    CHECK(v.cols() == 32);
    CHECK(v.allFinite());
    for (bool p : one[0].presence) CHECK_FALSE(p);
  }

  TEST_CASE("encode rejects a table with different features") {
    const Fixture f = fixture(20, 2);
    const auto m = Table2VecModel::create(f.schema, f.tasks, small_model(), 1);
    BigTable other = f.table;
    other.features[0] = "renamed";
    try {
      m.encode(other);
      FAIL("foreign table accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSchemaMismatch);
    }
  }

  TEST_CASE("long histories keep the most recent records") {
    const Fixture f = fixture(20, 3);
    auto config = small_model();
    config.transformer.max_len = 2;
    const auto m = Table2VecModel::create(f.schema, f.tasks, config, 1);
    CustomerRecords c = f.table.customers[0];
    const EncodedCustomer full = m.encode(c);
    CHECK(full.steps == 2);
    c.records.erase(c.records.begin(), c.records.end() - 2);
    const EncodedCustomer tail = m.encode(c);
    CHECK(tail.cd_ids == full.cd_ids);
    CHECK(tail.nd_values == full.nd_values);
  }

  TEST_CASE("reconstruction_targets examples") {
    const ReconstructionSpec s = ReconstructionSpec::generate(3, 5, 4, 11);
    CHECK(s.projections.size() == 3);
    for (const auto& t : reconstruction_targets(s, Matrix::Zero(2, 5))) CHECK(t.isZero(0.0));

    const ReconstructionSpec again = ReconstructionSpec::generate(3, 5, 4, 11);
    Rng rng(1);
    const Matrix x = testing::random_matrix(2, 5, rng);
    const auto a = reconstruction_targets(s, x), b = reconstruction_targets(again, x);
    for (std::size_t r = 0; r < 3; ++r) CHECK(a[r] == b[r]);

    ReconstructionSpec identity{1, 5, 0, {Matrix::Identity(5, 5)}};
    CHECK(reconstruction_targets(identity, x)[0] == x);
  }

  TEST_CASE("joint_loss examples") {
    const int labels[] = {0, 1, 1, 0};
    const Tensor ce = numeric::cross_entropy(Tensor::zeros(4, 2), labels);
    LossTerms uniform{{Tensor::scalar(3.0)}, {ce}, Tensor::scalar(0.0)};
    CHECK(joint_loss(uniform, {0.0, {1.0}}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    LossTerms terms{{Tensor::scalar(0.2), Tensor::scalar(0.3)}, {Tensor::scalar(0.7), Tensor::scalar(0.4)},
                    Tensor::scalar(0.05)};
    CHECK(joint_loss(terms, {0.5, {1.0, 2.0}}).item() == doctest::Approx(0.5 * 0.5 + 0.7 + 0.8 + 0.05));

    LossTerms perfect{{Tensor::scalar(0.0)}, {Tensor::scalar(0.0)}, Tensor::scalar(0.0)};
    CHECK(joint_loss(perfect, {0.5, {1.0}}).item() == 0.0);

    try {
      joint_loss(terms, {0.0, {0.0, 0.0}});
      FAIL("all-disabled loss accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kAllTermsDisabled);
    }
  }

  TEST_CASE("model loss is non-negative") {
    const Fixture f = fixture(40, 4);
    const auto m = Table2VecModel::create(f.schema, f.tasks, small_model(), 3);
    const auto enc = m.encode(f.table);
    const auto weights = class_weights(enc, f.tasks);
    const Tensor loss = joint_loss(m.loss_terms(pointers(enc, 40), weights), {0.5, {1.0}});
    CHECK(loss.item() >= 0.0);
  }

  TEST_CASE("class weights are inverse frequency") {
    const Fixture f = fixture(100, 5);
    const auto m = Table2VecModel::create(f.schema, f.tasks, small_model(), 3);
    const auto enc = m.encode(f.table);
    const auto w = class_weights(enc, f.tasks);
    double pos = 0;
    for (const auto& c : enc) pos += c.labels[0] == 1;
    CHECK(w[0][1] == doctest::Approx(100.0 / (2 * pos)).epsilon(1e-12));
    CHECK(w[0][0] == doctest::Approx(100.0 / (2 * (100 - pos))).epsilon(1e-12));
  }

  TEST_CASE("predict returns normalised probabilities matching the head arithmetic") {
    const Fixture f = fixture(30, 6);
    auto m = Table2VecModel::create(f.schema, f.tasks, small_model(), 9);
    Rng rng(2);
    Tensor w1 = m.params().at("task.label.w1"), b1 = m.params().at("task.label.b1");
    Tensor w2 = m.params().at("task.label.w2"), b2 = m.params().at("task.label.b2");
    w1.mutable_value() = testing::random_matrix(8, 8, rng);
    b1.mutable_value() = testing::random_matrix(1, 8, rng);
    w2.mutable_value() = testing::random_matrix(8, 2, rng);
    b2.mutable_value() = testing::random_matrix(1, 2, rng);

    const auto enc = m.encode(f.table);
    const Matrix p = m.predict(enc, "label");
    CHECK(p.cols() == 2);
    CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);

    const Matrix r = m.represent(enc);
    Matrix hidden = (r * w1.value()).rowwise() + Eigen::RowVectorXd(b1.value().row(0));
    hidden = hidden.cwiseMax(0.0);
    const Matrix logits = (hidden * w2.value()).rowwise() + Eigen::RowVectorXd(b2.value().row(0));
    for (Index i = 0; i < logits.rows(); ++i) {
      const double z = std::exp(logits(i, 0)) + std::exp(logits(i, 1));
      CHECK(std::abs(p(i, 1) - std::exp(logits(i, 1)) / z) < 1e-12);
    }

    try {
      m.predict(enc, "churn");
      FAIL("unknown task accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kUnknownTask);
    }
  }

  TEST_CASE("checkpoint save and load reproduce the model bit for bit") {
    const Fixture f = fixture(40, 7);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 5;
    const TrainResult trained = train(f.table, f.schema, small_model(), tc);
    const auto dir = testing::temp_dir("checkpoint");
    trained.model.save((dir / "model.json").string());
    const auto loaded = Table2VecModel::load((dir / "model.json").string());
    const auto enc = trained.model.encode(f.table);
    CHECK(loaded.represent(enc) == trained.model.represent(enc));
    CHECK(loaded.predict(enc, "label") == trained.model.predict(enc, "label"));
    CHECK(loaded.schema() == trained.model.schema());
    CHECK(loaded.to_json().dump() == trained.model.to_json().dump());
  }

  TEST_CASE("zero epochs returns the initial model") {
    const Fixture f = fixture(30, 8);
    TrainConfig tc;
    tc.epochs = 0;
    const TrainResult r = train(f.table, f.schema, small_model(), tc);
    CHECK(r.log.empty());
    CHECK(r.best_epoch == 0);
  }

  TEST_CASE("training lowers the training loss and is reproducible") {
    const Fixture f = fixture(200, 9);
    TrainConfig tc;
    tc.epochs = 6;
    tc.seed = 3;
    const TrainResult a = train(f.table, f.schema, small_model(), tc);
    REQUIRE(a.log.size() == 6);
    CHECK(a.log.back().train_loss < a.log.front().train_loss);
    REQUIRE(a.log.front().validation_auc.size() == 1);
    CHECK(a.log.front().validation_auc[0].first == "label");

    const TrainResult b = train(f.table, f.schema, small_model(), tc);
    CHECK(a.model.to_json().dump() == b.model.to_json().dump());
    CHECK(a.best_epoch == b.best_epoch);
  }

  TEST_CASE("unlabeled training reduces reconstruction error") {
    Fixture f = fixture(150, 10);
    f.table.tasks.clear();
    for (auto& c : f.table.customers) c.labels.clear();
    TrainConfig tc;
    tc.seed = 4;
    tc.epochs = 0;
    const TrainResult initial = train(f.table, f.schema, small_model(), tc);
    tc.epochs = 6;
    const TrainResult trained = train(f.table, f.schema, small_model(), tc);
    const auto enc = trained.model.encode(f.table);
    CHECK(reconstruction_mse(trained.model, enc) < reconstruction_mse(initial.model, enc));

    tc.reconstruction_weight = 0.0;
    try {
      train(f.table, f.schema, small_model(), tc);
      FAIL("nothing to learn accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNoLabeledCustomers);
    }
  }

  TEST_CASE("full-network gradient on two customers") {
    const Fixture f = fixture(30, 11);
    auto config = small_model();
    config.transformer.dropout = 0.0;
    auto m = Table2VecModel::create(f.schema, f.tasks, config, 12);
    const auto enc = m.encode(f.table);
    const auto batch = pointers(enc, 2);
    const auto weights = class_weights(enc, f.tasks);
    auto loss = [&] { return joint_loss(m.loss_terms(batch, weights), {0.5, {1.0}}); };
    Rng pick(13);
    CHECK(testing::parameter_gradient_error(m.params(), loss, 16, pick) < 1e-3);
  }
}
