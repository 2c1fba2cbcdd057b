#include "table2vec/numeric/optim.hpp"

#include <cmath>

#include "table2vec/error.hpp"

namespace t2v::numeric {

Tensor ParameterSet::add(const std::string& name, Matrix value) {
  for (const auto& n : names_)
    if (n == name) throw Error(ErrorCode::kSchema, "duplicate parameter '" + name + "'");
  names_.push_back(name);
  tensors_.emplace_back(std::move(value), true);
  return tensors_.back();
}

Tensor ParameterSet::add_affine_weight(const std::string& name, Index fan_in, Index fan_out, Rng& rng) {
  const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
  return add(name, std::move(w));
}

Tensor ParameterSet::add_embedding(const std::string& name, Index rows, Index cols, Rng& rng) {
  Matrix w(rows, cols);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = 0.02 * standard_normal(rng);
  return add(name, std::move(w));
}

Tensor ParameterSet::add_constant_init(const std::string& name, Index rows, Index cols, Scalar value) {
  return add(name, Matrix::Constant(rows, cols, value));
}

const Tensor& ParameterSet::at(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  throw Error(ErrorCode::kSchema, "no parameter named '" + name + "'");
}

void ParameterSet::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

nlohmann::json ParameterSet::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const Matrix& v = tensors_[i].value();
    params.push_back({{"name", names_[i]},
                      {"shape", {v.rows(), v.cols()}},
                      {"values", std::vector<Scalar>(v.data(), v.data() + v.size())}});
  }
  return {{"format", "table2vec-params"}, {"version", 1}, {"params", params}};
}

void ParameterSet::load_json(const nlohmann::json& j) {
  if (j.value("format", "") != "table2vec-params" || j.value("version", 0) != 1)
    throw Error(ErrorCode::kSchema, "not a version-1 parameter checkpoint");
  const auto& params = j.at("params");
  if (params.size() != names_.size())
    throw Error(ErrorCode::kSchema, "checkpoint has " + std::to_string(params.size()) +
                                        " parameters, model has " + std::to_string(names_.size()));
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto& p = params[i];
    const auto name = p.at("name").get<std::string>();
    Matrix& v = tensors_[i].mutable_value();
    const auto shape = p.at("shape").get<std::vector<Index>>();
    if (name != names_[i] || shape.size() != 2 || shape[0] != v.rows() || shape[1] != v.cols())
      throw Error(ErrorCode::kSchema, "checkpoint parameter '" + name + "' does not match '" +
                                          names_[i] + "' " + shape_string({v.rows(), v.cols()}));
    const auto values = p.at("values").get<std::vector<Scalar>>();
    if (static_cast<Index>(values.size()) != v.size())
      throw Error(ErrorCode::kSchema, "checkpoint parameter '" + name + "' has wrong value count");
    std::copy(values.begin(), values.end(), v.data());
  }
}

Adam::Adam(const ParameterSet& params, AdamConfig config) : params_(params), config_(config) {
  for (const auto& t : params.tensors()) {
    m_.push_back(Matrix::Zero(t.rows(), t.cols()));
    v_.push_back(Matrix::Zero(t.rows(), t.cols()));
  }
}

void Adam::step() {
  const auto& tensors = params_.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].has_grad() && !tensors[i].node()->grad.allFinite())
      throw Error(ErrorCode::kNonFiniteGradient, "non-finite gradient for '" + params_.names()[i] + "'");

  ++t_;
  const Scalar bc1 = 1.0 - std::pow(config_.beta1, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(config_.beta2, static_cast<Scalar>(t_));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor t = tensors[i];
    if (t.has_grad()) {
      const Matrix& g = t.node()->grad;
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    } else {
      m_[i] *= config_.beta1;
      v_[i] *= config_.beta2;
    }
    const auto mhat = (m_[i] / bc1).array();
    const auto vhat = (v_[i] / bc2).array();
    t.mutable_value().array() -= config_.learning_rate * mhat / (vhat.sqrt() + config_.epsilon);
  }
}

}  // namespace t2v::numeric
