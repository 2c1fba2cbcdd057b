#include <cmath>

#include "doctest.h"
#include "table2vec/dynamics.hpp"
#include "table2vec/error.hpp"
#include "test_support.hpp"

using namespace t2v;
using namespace t2v::dynamics;
using t2v::testing::random_matrix;

namespace {

TransformerConfig config(Index len, Index width, Index heads, int steps = 4) {
  TransformerConfig c;
  c.max_len = len;
  c.width = width;
  c.heads = heads;
  c.max_steps = steps;
  c.transition_width = 2 * width;
  return c;
}

struct Block {
  numeric::ParameterSet params;
  TransformerParams p;
};

Block block(const TransformerConfig& c, std::uint64_t seed) {
  Block b;
  Rng rng(seed);
  b.p = TransformerParams::create(b.params, "t", c, rng);
  return b;
}

Matrix softmax_rows(const Matrix& s) {
  Matrix out = s;
  for (Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    out.row(i) = (s.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix layer_norm_rows(const Matrix& x) {
  Matrix out = x;
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    out.row(i) = (x.row(i).array() - mu) / std::sqrt(var + 1e-5);
  }
  return out;
}

}  // namespace

TEST_SUITE("dynamics") {
  TEST_CASE("config validation") {
    CHECK_THROWS_AS(config(4, 6, 4).validate(), Error);
    auto c = config(4, 8, 2);
    c.max_steps = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = config(4, 8, 2);
    c.act_epsilon = 1.0;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_NOTHROW(config(4, 8, 2).validate());
  }

  TEST_CASE("parameter shapes") {
    const auto c = config(5, 8, 2);
    const Block b = block(c, 1);
    CHECK(b.p.query.shape() == numeric::Shape{8, 8});
    CHECK(b.p.output.shape() == numeric::Shape{8, 8});
    CHECK(b.p.halt_w.shape() == numeric::Shape{8, 1});
    CHECK(b.p.halt_b.shape() == numeric::Shape{1, 1});
    CHECK(b.p.mixer.shape() == numeric::Shape{40, 8});
  }

  TEST_CASE("coordinate_embedding properties") {
    const Matrix a = coordinate_embedding(3, 6, 8);
    CHECK(coordinate_embedding(3, 6, 8) == a);
    for (Index p = 0; p < 6; ++p)
      for (Index q = p + 1; q < 6; ++q) CHECK(a.row(p) != a.row(q));
    const Matrix diff = coordinate_embedding(2, 6, 8) - coordinate_embedding(1, 6, 8);
    for (Index p = 1; p < 6; ++p) CHECK((diff.row(p) - diff.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(diff.cwiseAbs().maxCoeff() > 0.1);
  }

  TEST_CASE("single-position attention is the value path") {
    const auto c = config(1, 4, 2);
    const Block b = block(c, 2);
    Rng rng(3);
    const Tensor x = Tensor::constant(random_matrix(1, 4, rng));
    const bool mask[] = {true};
    const AttentionResult r = mhsa(x, b.p, c, mask);
    CHECK((r.weights.array() == 1.0).all());
    const Matrix expected = x.value() * b.p.value.value() * b.p.output.value();
    CHECK((r.output.value() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("hand-set single-head attention matches straight-line arithmetic") {
    for (bool literal : {false, true}) {
      auto c = config(2, 2, 1);
      c.literal_scale = literal;
      Block b = block(c, 4);
      Matrix wq(2, 2), wk(2, 2), wv(2, 2), wo(2, 2), x(2, 2);
      wq << 1, 0.5, -0.5, 2;
      wk << 0.3, 1, 1, -1;
      wv << 2, 0, 1, 1;
      wo << 1, -1, 0.5, 0.25;
      x << 0.2, -1, 1.5, 0.7;
      b.p.query.mutable_value() = wq;
      b.p.key.mutable_value() = wk;
      b.p.value.mutable_value() = wv;
      b.p.output.mutable_value() = wo;
      const bool mask[] = {true, true};
      const AttentionResult r = mhsa(Tensor::constant(x), b.p, c, mask);
      // n_e / k = 2 here, so both scalings coincide
      const Matrix a = softmax_rows((x * wq) * (x * wk).transpose() / std::sqrt(2.0));
      CHECK((r.weights - a).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((r.output.value() - a * (x * wv) * wo).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("literal scaling divides by sqrt of the full width") {
    auto c = config(3, 4, 2);
    Block b = block(c, 5);
    Rng rng(6);
    const Matrix x = random_matrix(3, 4, rng);
    const bool mask[] = {true, true, true};
    c.literal_scale = true;
    const AttentionResult r = mhsa(Tensor::constant(x), b.p, c, mask);
    const Matrix q = x * b.p.query.value(), k = x * b.p.key.value();
    const Matrix head0 = softmax_rows(q.leftCols(2) * k.leftCols(2).transpose() / std::sqrt(4.0));
    CHECK((r.weights.topRows(3) - head0).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("attention rows sum to one over valid keys") {
    const auto c = config(5, 8, 4);
    const Block b = block(c, 7);
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      bool mask[10];
      for (int i = 0; i < 10; ++i) mask[i] = i % 5 == 0 || uniform01(rng) < 0.6;
      const Tensor x = Tensor::constant(random_matrix(10, 8, rng, 3.0));
      const AttentionResult r = mhsa(x, b.p, c, mask, 2);
      CHECK((r.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
      CHECK(r.weights.minCoeff() >= 0.0);
      for (Index row = 0; row < r.weights.rows(); ++row) {
        const Index seq = row / (4 * 5);
        for (Index key = 0; key < 5; ++key)
          if (!mask[seq * 5 + key]) CHECK(r.weights(row, key) == 0.0);
      }
    }
  }

  TEST_CASE("padded positions never touch valid outputs") {
    const auto c = config(6, 8, 2);
    const Block b = block(c, 9);
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
      const bool mask[] = {true, true, true, false, false, false};
      Matrix x = random_matrix(6, 8, rng);
      const Matrix before = mhsa(Tensor::constant(x), b.p, c, mask).output.value();
      x.bottomRows(3) = random_matrix(3, 8, rng, 50.0);
      const Matrix after = mhsa(Tensor::constant(x), b.p, c, mask).output.value();
      CHECK(after.topRows(3) == before.topRows(3));
    }
  }

  TEST_CASE("all-masked sequence is rejected") {
    const auto c = config(2, 4, 2);
    const Block b = block(c, 11);
    const bool mask[] = {false, false};
    try {
      mhsa(Tensor::zeros(2, 4), b.p, c, mask);
      FAIL("all-masked input accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kAllMaskedInput);
    }
  }

  TEST_CASE("transformer_step contracts") {
    const auto c = config(4, 8, 2);
    Block b = block(c, 12);
    Rng rng(13);
    const Tensor e = Tensor::constant(random_matrix(4, 8, rng));
    const bool mask[] = {true, true, true, false};
    const Tensor a = transformer_step(e, 1, b.p, c, mask);
    CHECK(a.shape() == e.shape());
    CHECK(transformer_step(e, 1, b.p, c, mask).value() == a.value());
    CHECK_THROWS_AS(transformer_step(e, 1, b.p, c, mask, 1, true, nullptr), Error);

    for (Tensor* w : {&b.p.query, &b.p.key, &b.p.value, &b.p.output, &b.p.transition_in_w, &b.p.transition_out_w})
      w->mutable_value().setZero();
    const Matrix expected = layer_norm_rows(layer_norm_rows(e.value() + coordinate_embedding(2, 4, 8)));
    CHECK((transformer_step(e, 2, b.p, c, mask).value() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("act halts immediately under a large halting bias") {
    const auto c = config(3, 8, 2);
    Block b = block(c, 14);
    b.p.halt_b.mutable_value()(0, 0) = 40.0;
    Rng rng(15);
    const Tensor e = Tensor::constant(random_matrix(3, 8, rng));
    const bool mask[] = {true, true, true};
    const ActResult r = act_run(e, b.p, c, mask);
    CHECK(r.halt_steps == std::vector<int>{1, 1, 1});
    CHECK(r.state.value() == transformer_step(e, 1, b.p, c, mask).value());
    CHECK(r.mean_steps == 1.0);
  }

  TEST_CASE("act runs to the cap under a negative halting bias") {
    const auto c = config(3, 8, 2, 3);
    Block b = block(c, 16);
    b.p.halt_b.mutable_value()(0, 0) = -40.0;
    Rng rng(17);
    const Tensor e = Tensor::constant(random_matrix(3, 8, rng));
    const bool mask[] = {true, true, false};
    const ActResult r = act_run(e, b.p, c, mask);
    CHECK(r.halt_steps == std::vector<int>{3, 3, 0});
    CHECK(r.state.value().row(2).isZero(0.0));
    Tensor s = e;
    for (int t = 1; t <= 3; ++t) s = transformer_step(s, t, b.p, c, mask);
    CHECK(r.state.value().topRows(2) == s.value().topRows(2));
  }

  TEST_CASE("act halting bounds and ponder accounting over 100 random inputs") {
    const auto c = config(5, 8, 2, 4);
    Rng rng(18);
    int observed_max = 0;
    for (int trial = 0; trial < 100; ++trial) {
      Block b = block(c, 100 + trial);
      b.p.halt_b.mutable_value()(0, 0) = 4.0 * uniform01(rng) - 2.0;
      bool mask[10];
      for (int i = 0; i < 10; ++i) mask[i] = i % 5 == 0 || uniform01(rng) < 0.7;
      const ActResult r = act_run(Tensor::constant(random_matrix(10, 8, rng, 2.0)), b.p, c, mask, 2);
      double expected = 0, valid = 0;
      for (int i = 0; i < 10; ++i) {
        if (!mask[i]) {
          CHECK(r.halt_steps[i] == 0);
          continue;
        }
        CHECK(r.halt_steps[i] >= 1);
        CHECK(r.halt_steps[i] <= 4);
        CHECK(r.remainders[i] > 0.0);
        CHECK(r.remainders[i] <= 1.0);
        observed_max = std::max(observed_max, r.halt_steps[i]);
        expected += r.halt_steps[i] + r.remainders[i];
        valid += 1;
      }
      CHECK(r.ponder.item() == doctest::Approx(expected / valid).epsilon(1e-12));
      CHECK(r.penalty.item() == doctest::Approx(0.01 * expected / valid).epsilon(1e-12));
    }
    CHECK(observed_max <= 4);
  }

  TEST_CASE("dynamic_embed examples") {
    const Index len = 3, width = 4;
    Matrix mixer(len * width, width);
    for (Index p = 0; p < len; ++p) mixer.middleRows(p * width, width) = Matrix::Identity(width, width) / len;
    Rng rng(19);
    const Matrix ef = random_matrix(len, width, rng);
    const Tensor m = Tensor::constant(mixer);
    const Matrix e = dynamic_embed(Tensor::constant(ef), m).value();
    CHECK((e - ef.colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(dynamic_embed(Tensor::zeros(len, width), m).value().isZero(0.0));
    CHECK(dynamic_embed(Tensor::constant(2.0 * ef), m).value() == 2.0 * e);
    try {
      dynamic_embed(Tensor::zeros(2, width), m);
      FAIL("mismatched state accepted");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::kShapeMismatch);
    }
  }

  TEST_CASE("three-step block gradient matches central differences") {
    auto c = config(3, 8, 2, 3);
    c.dropout = 0.0;
    Block b = block(c, 20);
    b.p.halt_b.mutable_value()(0, 0) = -0.5;
    Rng rng(21);
    const Matrix e0 = random_matrix(6, 8, rng);
    const bool mask[] = {true, true, false, true, true, true};
    const Matrix w = random_matrix(2, 8, rng);
    auto loss = [&](const Tensor& e) {
      const ActResult r = act_run(e, b.p, c, mask, 2);
      const Tensor d = dynamic_embed(r.state, b.p.mixer, 2);
      return numeric::add(numeric::sum(numeric::mul(d, Tensor::constant(w))), r.penalty);
    };
    const ActResult probe = act_run(Tensor::constant(e0), b.p, c, mask, 2);
    CHECK(*std::max_element(probe.halt_steps.begin(), probe.halt_steps.end()) >= 2);

    CHECK(testing::gradient_error([&](auto& x) { return loss(x[0]); }, {e0}) < 1e-3);
    Rng pick(22);
    CHECK(testing::parameter_gradient_error(b.params, [&] { return loss(Tensor::constant(e0)); }, 24, pick) < 1e-3);
  }
}
