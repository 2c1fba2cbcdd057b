#include <algorithm>

#include "doctest.h"
#include "table2vec/embed.hpp"
#include "table2vec/error.hpp"
#include "test_support.hpp"

using namespace t2v;
using namespace t2v::embed;
using t2v::testing::gradient_error;
using t2v::testing::random_matrix;

TEST_SUITE("embed") {
  TEST_CASE("categorical_embed reads table rows") {
    Matrix table(4, 2);
    table << 9, 9, 8, 8, 1, 2, 3, 4;
    const std::vector<Tensor> tables = {Tensor::constant(table), Tensor::constant(table)};
    const int ids[] = {2, 3};
    const Tensor e = categorical_embed(ids, tables);
    CHECK(e.value().row(0) == table.row(2));
    CHECK(e.value().row(1) == table.row(3));

    const int missing[] = {0, 0};
    const Tensor m = categorical_embed(missing, tables);
    CHECK(m.value().row(0) == table.row(0));
    CHECK(m.value().row(0) == m.value().row(1));

    const int bad[] = {4, 0};
    try {
      categorical_embed(bad, tables);
      FAIL("id beyond vocabulary accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kIdOutOfRange);
    }
  }

  TEST_CASE("positional_numeric_embed examples") {
    Matrix m(2, 2);
    m << 2, 4, 5, -1;
    const Tensor mt = Tensor::constant(m);
    const double values[] = {0.5, 0.0};
    const Tensor e = positional_numeric_embed(values, mt);
    CHECK(e.value()(0, 0) == 1.0);
    CHECK(e.value()(0, 1) == 2.0);
    CHECK(e.value().row(1).isZero(0.0));

    const double unit[] = {1.0, 1.0};
    CHECK(positional_numeric_embed(unit, mt).value() == m);

    const double short_values[] = {1.0};
    try {
      positional_numeric_embed(short_values, mt);
      FAIL("length mismatch accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kLengthMismatch);
    }
  }

  TEST_CASE("positional_numeric_embed is linear in the values") {
    Rng rng(3);
    const Tensor m = Tensor::constant(random_matrix(4, 6, rng));
    const std::vector<double> v = {0.2, 0.9, 0.0, 0.4};
    std::vector<double> scaled;
    for (double x : v) scaled.push_back(0.5 * x);
    const Matrix a = positional_numeric_embed(v, m).value();
    CHECK((positional_numeric_embed(scaled, m).value() - 0.5 * a).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("max_concat examples") {
    Matrix e(2, 2);
    e << 1, 5, 3, 2;
    const MaxConcat r = max_concat(Tensor::constant(e));
    CHECK(r.vector.value()(0, 0) == 3.0);
    CHECK(r.vector.value()(0, 1) == 5.0);
    CHECK_FALSE(r.degenerate);

    CHECK(max_concat(Tensor::constant(e.topRows(1))).vector.value() == e.topRows(1));

    const bool none[] = {false, false};
    const MaxConcat empty = max_concat(Tensor::constant(e), none);
    CHECK(empty.degenerate);
    CHECK(empty.vector.value().isZero(0.0));

    const bool second[] = {false, true};
    CHECK(max_concat(Tensor::constant(e), second).vector.value() == e.row(1));
  }

  TEST_CASE("max_concat dominates every row and picks existing coordinates") {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix e = random_matrix(1 + static_cast<Index>(uniform_index(rng, 6)), 5, rng);
      const Matrix v = max_concat(Tensor::constant(e)).vector.value();
      for (Index j = 0; j < e.cols(); ++j) {
        CHECK((e.col(j).array() <= v(0, j)).all());
        CHECK((e.col(j).array() == v(0, j)).any());
      }
    }
  }

  TEST_CASE("max_concat routes each column's gradient to the first argmax") {
    Matrix e(3, 2);
    e << 1, 7, 4, 7, 4, 0;
    Tensor t(e, true);
    numeric::backward(numeric::sum(max_concat(t).vector));
    Matrix expected = Matrix::Zero(3, 2);
    expected(1, 0) = 1;
    expected(0, 1) = 1;
    CHECK(t.grad() == expected);

    Rng rng(5);
    const std::vector<Matrix> in = {random_matrix(4, 3, rng)};
    CHECK(gradient_error(
              [](auto& x) {
                return numeric::sum(numeric::mul(max_concat(x[0]).vector,
                                                 Tensor::constant(Matrix(Eigen::RowVectorXd::LinSpaced(3, 1, 3)))));
              },
              in) < 1e-3);
  }

  TEST_CASE("batched embeddings match per-item max_concat") {
    Rng rng(21);
    const std::vector<Tensor> tables = {Tensor::constant(random_matrix(5, 4, rng)),
                                        Tensor::constant(random_matrix(3, 4, rng))};
    const std::vector<std::vector<int>> ids = {{0, 4, 2}, {1, 2, 0}};
    const Tensor batched = categorical_embed_max(ids, tables);
    for (int item = 0; item < 3; ++item) {
      const int row[] = {ids[0][item], ids[1][item]};
      CHECK(batched.value().row(item) == max_concat(categorical_embed(row, tables)).vector.value());
    }

    const Tensor m = Tensor::constant(random_matrix(3, 4, rng));
    const Matrix values = random_matrix(2, 3, rng).cwiseAbs();
    const Tensor nb = numeric_embed_max(values, m);
    for (Index item = 0; item < 2; ++item) {
      const std::vector<double> v(values.row(item).data(), values.row(item).data() + 3);
      CHECK(nb.value().row(item) == max_concat(positional_numeric_embed(v, m)).vector.value());
    }
  }
}
