#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "table2vec/eval.hpp"
#include "table2vec/model.hpp"
#include "table2vec/numeric/ops.hpp"
#include "table2vec/random.hpp"

namespace t2v::testing {

using numeric::Index;
using numeric::Matrix;
using numeric::Scalar;
using numeric::Tensor;

inline std::string fixture_path(const std::string& name) { return std::string(T2V_FIXTURE_DIR) + "/" + name; }

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return m;
}

// |a - n| / max(|a|, |n|, floor); the floor keeps exact-zero gradients from
// turning rounding noise into large ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Largest relative error between backward() and central differences over
// every entry of every input.
inline double gradient_error(const ScalarFn& f, const std::vector<Matrix>& inputs, double h = 1e-5) {
  std::vector<Tensor> leaves;
  for (const auto& m : inputs) leaves.emplace_back(m, true);
  numeric::backward(f(leaves));
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix analytic = leaves[i].grad();
    for (Index j = 0; j < inputs[i].size(); ++j) {
      auto eval = [&](double shift) {
        std::vector<Tensor> probe;
        for (std::size_t q = 0; q < inputs.size(); ++q) {
          Matrix m = inputs[q];
          if (q == i) m.data()[j] += shift;
          probe.push_back(Tensor::constant(std::move(m)));
        }
        return f(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      worst = std::max(worst, relative_error(analytic.data()[j], numeric));
    }
  }
  return worst;
}

// Same check against a parameter set driven by a closure that rebuilds the
// loss from the current parameter values. At most `per_tensor` entries of
// each parameter are probed, chosen by `rng`.
inline double parameter_gradient_error(numeric::ParameterSet& params, const std::function<Tensor()>& loss,
                                       std::size_t per_tensor, Rng& rng, double h = 1e-5) {
  params.zero_grad();
  numeric::backward(loss());
  double worst = 0;
  for (const auto& t : params.tensors()) {
    Tensor p = t;
    const Matrix analytic = p.grad();
    std::vector<Index> entries(static_cast<std::size_t>(p.value().size()));
    for (std::size_t e = 0; e < entries.size(); ++e) entries[e] = static_cast<Index>(e);
    if (entries.size() > per_tensor) {
      for (std::size_t e = 0; e < per_tensor; ++e)
        std::swap(entries[e], entries[e + uniform_index(rng, entries.size() - e)]);
      entries.resize(per_tensor);
    }
    for (Index j : entries) {
      const double saved = p.mutable_value().data()[j];
      p.mutable_value().data()[j] = saved + h;
      const double up = loss().item();
      p.mutable_value().data()[j] = saved - h;
      const double down = loss().item();
      p.mutable_value().data()[j] = saved;
      worst = std::max(worst, relative_error(analytic.data()[j], (up - down) / (2 * h)));
    }
  }
  params.zero_grad();
  return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("table2vec_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline eval::SynthConfig small_synth(std::size_t customers, std::uint64_t seed) {
  eval::SynthConfig c;
  c.customers = customers;
  c.seed = seed;
  return c;
}

inline model::ModelConfig small_model() {
  model::ModelConfig c;
  c.transformer.width = 16;
  c.transformer.heads = 2;
  c.transformer.max_steps = 2;
  c.transformer.transition_width = 16;
  c.representation_width = 8;
  c.fusion_width = 16;
  c.head_width = 8;
  c.reconstruction_width = 4;
  return c;
}

}  // namespace t2v::testing
