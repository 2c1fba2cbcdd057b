#include <cmath>

#include "doctest.h"
#include "table2vec/error.hpp"
#include "table2vec/numeric/ops.hpp"
#include "table2vec/numeric/optim.hpp"
#include "op_cases.hpp"
#include "test_support.hpp"

using namespace t2v;
using namespace t2v::numeric;
using t2v::testing::gradient_error;
using t2v::testing::random_matrix;
using t2v::testing::op_cases;
using t2v::testing::probe;

namespace {

Matrix mat(Index rows, Index cols, std::initializer_list<double> values) {
  Matrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

}  // namespace

TEST_SUITE("numeric") {
  TEST_CASE("forward examples") {
    const Tensor s = softmax(Tensor::constant(Matrix::Zero(1, 3)));
    for (Index j = 0; j < 3; ++j) CHECK(s.value()(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));

    const Tensor ln = layer_norm(Tensor::constant(Matrix::Constant(1, 5, 4.2)));
    CHECK(ln.value().cwiseAbs().maxCoeff() == 0.0);

    const Tensor m = matmul(Tensor::constant(mat(2, 2, {1, 2, 3, 4})), Tensor::constant(mat(2, 1, {1, 1})));
    CHECK(m.value() == mat(2, 1, {3, 7}));
  }

  TEST_CASE("layer_norm yields zero mean and unit variance") {
    Rng rng(3);
    const Tensor y = layer_norm(Tensor::constant(random_matrix(5, 8, rng, 3.0)));
    for (Index i = 0; i < 5; ++i) {
      const auto row = y.value().row(i);
      CHECK(std::abs(row.mean()) < 1e-12);
      CHECK(row.array().square().mean() == doctest::Approx(1.0).epsilon(1e-4));
    }
  }

  TEST_CASE("backward examples") {
    Tensor x(mat(1, 1, {3}), true);
    backward(mul(x, x));
    CHECK(x.grad()(0, 0) == 6.0);

    Tensor v(mat(1, 2, {-1, 2}), true);
    backward(sum(relu(v)));
    CHECK(v.grad() == mat(1, 2, {0, 1}));

    Rng rng(1);
    const std::vector<Matrix> in = {random_matrix(3, 3, rng), random_matrix(3, 3, rng)};
    CHECK(gradient_error([](auto& x) { return probe(softmax(matmul(x[0], x[1])), 4); }, in) < 1e-3);
  }

  TEST_CASE("backward rejects non-scalar losses") {
    try {
      backward(Tensor(Matrix::Ones(2, 2), true));
      FAIL("non-scalar loss accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNonScalarLoss);
    }
  }

  TEST_CASE("every op matches central differences on 20 random inputs") {
    for (const auto& c : op_cases()) {
      CAPTURE(c.name);
      double worst = 0;
      for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial);
        std::vector<Matrix> inputs;
        for (auto [r, k] : c.shapes) inputs.push_back(random_matrix(r, k, rng, 2.0));
        worst = std::max(worst, gradient_error([&](auto& x) { return probe(c.op(x), 500 + trial); }, inputs));
      }
      CHECK(worst < 1e-3);
    }
  }

  TEST_CASE("shape errors name both shapes") {
    try {
      matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3));
      FAIL("bad matmul accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kShapeMismatch);
      CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(Tensor::zeros(2, 3), Tensor::zeros(3, 2)), Error);
    CHECK_THROWS_AS(reshape(Tensor::zeros(2, 3), 4, 2), Error);
  }

  TEST_CASE("softmax rows are non-negative and sum to one") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor s = softmax(Tensor::constant(random_matrix(4, 7, rng, 30.0)));
      CHECK(s.value().minCoeff() >= 0.0);
      CHECK((s.value().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    }
  }

  TEST_CASE("dropout is the identity outside training") {
    Rng rng(1);
    const Tensor x = Tensor::constant(random_matrix(4, 5, rng));
    CHECK(dropout(x, 0.5, false, rng).value() == x.value());
    CHECK(dropout(x, 0.0, true, rng).value() == x.value());
  }

  TEST_CASE("cross_entropy of uniform logits is ln 2") {
    const int labels[] = {0, 1, 1, -1};
    CHECK(cross_entropy(Tensor::zeros(4, 2), labels).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const int none[] = {-1, -1};
    CHECK(cross_entropy(Tensor::zeros(2, 2), none).item() == 0.0);
  }

  TEST_CASE("adam examples") {
    ParameterSet params;
    Tensor w = params.add("w", mat(1, 1, {0.0}));
    Adam still(params, {});
    w.mutable_value()(0, 0) = 1.5;
    backward(scale(w, 0.0));
    still.step();
    CHECK(w.value()(0, 0) == 1.5);

    params.zero_grad();
    Adam descend(params, {});
    for (int i = 0; i < 10; ++i) {
      params.zero_grad();
      backward(scale(w, 3.0));
      descend.step();
    }
    CHECK(w.value()(0, 0) < 1.5);

    ParameterSet bowl;
    Tensor b = bowl.add("b", mat(1, 1, {0.0}));
    AdamConfig c;
    c.learning_rate = 0.1;
    Adam adam(bowl, c);
    for (int i = 0; i < 200; ++i) {
      bowl.zero_grad();
      const Tensor d = sub(b, Tensor::scalar(2.0));
      backward(mul(d, d));
      adam.step();
    }
    CHECK(std::abs(b.value()(0, 0) - 2.0) < 1e-2);
  }

  TEST_CASE("adam refuses non-finite gradients") {
    ParameterSet params;
    Tensor w = params.add("weights", mat(1, 2, {1.0, 2.0}));
    Adam adam(params, {});
    backward(sum(mul(w, Tensor::constant(mat(1, 2, {1.0, std::numeric_limits<double>::infinity()})))));
    try {
      adam.step();
      FAIL("non-finite gradient accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNonFiniteGradient);
      CHECK(std::string(e.what()).find("weights") != std::string::npos);
    }
    CHECK(w.value() == mat(1, 2, {1.0, 2.0}));
  }

  TEST_CASE("parameter checkpoint round-trip") {
    Rng rng(4);
    ParameterSet a;
    a.add_affine_weight("w", 3, 4, rng);
    a.add_embedding("e", 5, 2, rng);
    a.add_constant_init("b", 1, 4, 0.25);
    const std::string text = a.to_json().dump();

    Rng other(99);
    ParameterSet b;
    b.add_affine_weight("w", 3, 4, other);
    b.add_embedding("e", 5, 2, other);
    b.add_constant_init("b", 1, 4, 0.0);
    b.load_json(nlohmann::json::parse(text));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.tensors()[i].value() == b.tensors()[i].value());

    ParameterSet wrong;
    wrong.add_constant_init("w", 2, 2, 0.0);
    CHECK_THROWS_AS(wrong.load_json(a.to_json()), Error);
  }

  TEST_CASE("affine init respects the uniform bound") {
    Rng rng(12);
    ParameterSet p;
    const Tensor w = p.add_affine_weight("w", 30, 10, rng);
    CHECK(w.value().cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 40.0));
  }
}
