#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "table2vec/numeric/tensor.hpp"
#include "table2vec/random.hpp"

namespace t2v::numeric {

// Named learnable leaves in registration order. Order is part of the
// checkpoint contract and of the optimiser's determinism.
class ParameterSet {
 public:
  // Uniform in +-sqrt(6 / (fan_in + fan_out)).
  Tensor add_affine_weight(const std::string& name, Index fan_in, Index fan_out, Rng& rng);
  // Normal(0, 0.02).
  Tensor add_embedding(const std::string& name, Index rows, Index cols, Rng& rng);
  Tensor add_constant_init(const std::string& name, Index rows, Index cols, Scalar value);
  Tensor add(const std::string& name, Matrix value);

  const Tensor& at(const std::string& name) const;
  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  void zero_grad();
  std::size_t scalar_count() const;

  // {"format": "table2vec-params", "version": 1, "params": [{name, shape, values}]}
  nlohmann::json to_json() const;
  // Overwrites values of an identically shaped set; throws kSchema on any
  // name or shape difference.
  void load_json(const nlohmann::json& j);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

struct AdamConfig {
  Scalar learning_rate = 1e-3;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config);

  // Applies one update from the parameters' current gradients (absent
  // gradients count as zero). On any non-finite gradient nothing changes and
  // kNonFiniteGradient names the parameter.
  void step();
  long steps() const { return t_; }
  Scalar learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(Scalar lr) { config_.learning_rate = lr; }

 private:
  const ParameterSet& params_;
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace t2v::numeric
