#include <cmath>

#include "doctest.h"
#include "table2vec/error.hpp"
#include "table2vec/interpret.hpp"
#include "test_support.hpp"

using namespace t2v;
using namespace t2v::interpret;
using numeric::Tensor;

namespace {

// target = sum over features and records of w_f * value; Missing counts 0.
TargetFn linear_target(std::vector<double> w) {
  return [w](std::span<const CustomerRecords> customers) {
    Matrix out = Matrix::Zero(static_cast<Index>(customers.size()), 1);
    for (std::size_t u = 0; u < customers.size(); ++u)
      for (const auto& r : customers[u].records)
        for (std::size_t f = 0; f < w.size(); ++f)
          if (const double* x = std::get_if<double>(&r.cells[f])) out(static_cast<Index>(u), 0) += w[f] * *x;
    return out;
  };
}

BigTable linear_table(std::size_t customers, std::size_t features, Rng& rng) {
  BigTable t;
  for (std::size_t f = 0; f < features; ++f) t.features.push_back("x" + std::to_string(f));
  for (std::size_t u = 0; u < customers; ++u) {
    Record r;
    for (std::size_t f = 0; f < features; ++f) r.cells.push_back(uniform01(rng));
    t.customers.push_back({"c" + std::to_string(u), {r}, {}});
  }
  return t;
}

}  // namespace

TEST_SUITE("interpret") {
  TEST_CASE("sensitive_customers examples") {
    const std::vector<std::string> ids = {"c1", "c2", "c3"};
    const std::vector<double> v = {0.9, 0.1, 0.5};
    CHECK(sensitive_customers(ids, v, 2) == std::vector<std::string>{"c1", "c3"});
    CHECK(sensitive_customers(ids, v, 3).size() == 3);
    const std::vector<double> flat = {0.4, 0.4, 0.4};
    const std::vector<std::string> shuffled = {"c3", "c1", "c2"};
    CHECK(sensitive_customers(shuffled, flat, 1) == std::vector<std::string>{"c1"});

    Matrix reps(3, 2);
    reps << 0, 0.9, 0, 0.1, 0, 0.5;
    CHECK(sensitive_customers(ids, reps, 1, 2) == std::vector<std::string>{"c1", "c3"});
    try {
      sensitive_customers(ids, reps, 2, 1);
      FAIL("position beyond width accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kPositionOutOfRange);
    }
  }

  TEST_CASE("sensitive_customers ignores input order") {
    Rng rng(1);
    std::vector<std::string> ids;
    std::vector<double> v;
    for (int i = 0; i < 30; ++i) {
      ids.push_back("c" + std::to_string(i));
      v.push_back(std::round(uniform01(rng) * 5));
    }
    auto top = sensitive_customers(ids, v, 7);
    std::sort(top.begin(), top.end());
    std::reverse(ids.begin(), ids.end());
    std::reverse(v.begin(), v.end());
    auto again = sensitive_customers(ids, v, 7);
    std::sort(again.begin(), again.end());
    CHECK(top == again);
  }

  TEST_CASE("mask_and_delta examples") {
    const TargetFn target = linear_target({2.0, 0.0});
    const CustomerRecords c{"u", {Record{{0.5, 3.0}, {}}, Record{{Missing{}, 1.0}, {}}}, {}};
    CHECK(mask_and_delta(target, c, 0, 0) == -1.0);
    CHECK(mask_and_delta(target, c, 1, 0) == 0.0);
    CHECK(mask_and_delta(target, c, 0, 1) == 0.0);
    try {
      mask_and_delta(target, c, 2, 0);
      FAIL("bad feature accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidCellCoordinates);
    }
    CHECK_THROWS_AS(mask_and_delta(target, c, 0, 2), Error);
  }

  TEST_CASE("sensitive_features examples") {
    const std::vector<std::string> names = {"a", "b"};
    const std::vector<CellDelta> zeros = {{"u", 0, 0, 0.0}, {"u", 1, 0, 0.0}};
    CHECK(sensitive_features(zeros, names, 0.1).empty());

    const std::vector<CellDelta> single = {{"u", 1, 0, -0.5}};
    const auto s = sensitive_features(single, names, 0.1);
    REQUIRE(s.size() == 1);
    CHECK(s[0].name == "b");
    CHECK(s[0].mean_abs_delta == 0.5);
    CHECK(s[0].sign == -1);
    CHECK(s[0].support == 1);

    const std::vector<CellDelta> two = {{"u", 0, 0, 0.2}, {"v", 0, 0, -0.2}, {"u", 1, 0, 0.4}, {"v", 1, 1, 0.4}};
    const auto r = sensitive_features(two, names, 0.1);
    REQUIRE(r.size() == 2);
    CHECK(r[0].name == "b");
    CHECK(r[0].mean_abs_delta == doctest::Approx(0.4));
    CHECK(r[1].mean_abs_delta == doctest::Approx(0.2));
    CHECK(r[1].sign == 0);
  }

  TEST_CASE("linear target scores equal |weight x value|") {
    Rng rng(2);
    const std::vector<double> w = {1.5, -0.25, 0.0, 3.0};
    const BigTable t = linear_table(12, 4, rng);
    const TargetFn target = linear_target(w);
    for (const auto& c : t.customers)
      for (std::size_t f = 0; f < w.size(); ++f)
        CHECK(std::abs(mask_and_delta(target, c, f, 0) + w[f] * std::get<double>(c.records[0].cells[f])) < 1e-9);

    InterpretConfig config;
    config.k = 12;
    config.delta_threshold = 0.0;
    const std::vector<std::string> columns = {"y"};
    const GenomeReport report = genome_report(target, columns, t, t.features, config);
    REQUIRE(report.targets.size() == 1);
    for (const auto& s : report.targets[0].ranking) {
      double expected = 0;
      for (const auto& c : t.customers) expected += std::abs(w[s.feature] * std::get<double>(c.records[0].cells[s.feature]));
      CHECK(std::abs(s.mean_abs_delta - expected / 12) < 1e-9);
    }
    CHECK(report.targets[0].ranking.size() == 3);
    CHECK(report.targets[0].ranking[0].name == "x3");
  }

  TEST_CASE("genome_report on a model: determinism, purity and thresholds") {
    const BigTable table = order_records(eval::synth_generate(testing::small_synth(40, 3)));
    const FeatureSchema schema = build_schema(table, {});
    const auto m = model::Table2VecModel::create(schema, model::infer_tasks(table), testing::small_model(), 5);
    const BigTable before = table;

    InterpretConfig config;
    config.k = 4;
    config.mask_samples = 8;
    config.seed = 6;
    const GenomeReport a = genome_report(m, table, config);
    const GenomeReport b = genome_report(m, table, config);
    CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
    CHECK(table == before);
    CHECK(a.targets.size() == 8);
    for (const auto& t : a.targets) {
      CHECK(t.sensitive_customers.size() == 4);
      for (std::size_t i = 1; i < t.ranking.size(); ++i)
        CHECK(t.ranking[i - 1].mean_abs_delta >= t.ranking[i].mean_abs_delta);
    }

    config.delta_threshold = 1e6;
    const GenomeReport empty = genome_report(m, table, config);
    for (const auto& t : empty.targets) CHECK(t.ranking.empty());
    CHECK(empty.summary.empty());

    config.delta_threshold.reset();
    config.target.kind = Target::Kind::kClassProbability;
    const GenomeReport cls = genome_report(m, table, config);
    REQUIRE(cls.targets.size() == 1);
    CHECK(cls.targets[0].target == "p(label=1)");

    config.target.kind = Target::Kind::kPosition;
    config.target.position = 3;
    CHECK(genome_report(m, table, config).targets.size() == 1);
    config.target.position = 8;
    CHECK_THROWS_AS(genome_report(m, table, config), Error);
  }

  TEST_CASE("masking a dead path leaves the target unchanged") {
    const BigTable table = order_records(eval::synth_generate(testing::small_synth(20, 4)));
    const FeatureSchema schema = build_schema(table, {});
    auto m = model::Table2VecModel::create(schema, model::infer_tasks(table), testing::small_model(), 5);
    const std::size_t sn0 = *table.feature_index("sn_0");
    std::size_t position = 0;
    for (std::size_t i : schema.indices(FeatureKind::kStaticNumerical)) {
      if (i == sn0) break;
      ++position;
    }
    Tensor ns = m.params().at("ns");
    ns.mutable_value().row(static_cast<Index>(position)).setZero();
    const TargetFn target = representation_target(m);
    std::size_t checked = 0;
    for (const auto& c : table.customers) {
      // masking must not flip the branch presence bit
      std::size_t present = 0;
      for (const auto& r : c.records)
        for (std::size_t i : schema.indices(FeatureKind::kStaticNumerical)) present += !is_missing(r.cells[i]);
      if (present < 2) continue;
      for (std::size_t r = 0; r < c.records.size(); ++r)
        if (!is_missing(c.records[r].cells[sn0])) {
          CHECK(mask_and_delta(target, c, sn0, r, 0) == 0.0);
          ++checked;
        }
    }
    CHECK(checked > 0);
  }

  TEST_CASE("config validation and bars") {
    InterpretConfig c;
    c.k = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c.k = 1;
    c.mask_samples = 0;
    CHECK_THROWS_AS(c.validate(), Error);

    GenomeReport r;
    r.summary.push_back({0, "sn_0", 0.4, 1, 3});
    r.summary.push_back({1, "dc_0", 0.2, -1, 2});
    const std::string bars = render_bars(r, 10);
    CHECK(bars.find("sn_0") != std::string::npos);
    CHECK(bars.find("##########") != std::string::npos);
  }
}
