#include "table2vec/dynamics.hpp"

#include <cmath>
#include <memory>

#include "table2vec/error.hpp"

namespace t2v::dynamics {

using namespace numeric;

void TransformerConfig::validate() const {
  if (max_len < 1 || width < 1 || heads < 1 || width % heads != 0)
    throw Error(ErrorCode::kInvalidConfig, "transformer width must be a positive multiple of heads");
  if (max_steps < 1) throw Error(ErrorCode::kInvalidConfig, "max_steps must be >= 1");
  if (!(act_epsilon > 0 && act_epsilon < 1))
    throw Error(ErrorCode::kInvalidConfig, "act_epsilon must lie in (0, 1)");
  if (ponder_cost < 0) throw Error(ErrorCode::kInvalidConfig, "ponder_cost must be >= 0");
  if (transition_width < 1) throw Error(ErrorCode::kInvalidConfig, "transition_width must be >= 1");
  if (dropout < 0 || dropout >= 1) throw Error(ErrorCode::kInvalidConfig, "dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const TransformerConfig& c) {
  j = nlohmann::json{{"max_len", c.max_len},
                     {"width", c.width},
                     {"heads", c.heads},
                     {"max_steps", c.max_steps},
                     {"act_epsilon", c.act_epsilon},
                     {"ponder_cost", c.ponder_cost},
                     {"transition_width", c.transition_width},
                     {"dropout", c.dropout},
                     {"literal_scale", c.literal_scale}};
}

void from_json(const nlohmann::json& j, TransformerConfig& c) {
  c.max_len = j.value("max_len", c.max_len);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.act_epsilon = j.value("act_epsilon", c.act_epsilon);
  c.ponder_cost = j.value("ponder_cost", c.ponder_cost);
  c.transition_width = j.value("transition_width", c.transition_width);
  c.dropout = j.value("dropout", c.dropout);
  c.literal_scale = j.value("literal_scale", c.literal_scale);
}

TransformerParams TransformerParams::create(ParameterSet& params, const std::string& prefix,
                                            const TransformerConfig& config, Rng& rng) {
  config.validate();
  const Index d = config.width;
  const Index dh = d / config.heads;
  // Each head block gets its own n_e x (n_e / k) Xavier bound.
  auto heads = [&](const std::string& name) {
    const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(d + dh));
    Matrix w(d, d);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
    return params.add(prefix + "." + name, std::move(w));
  };
  TransformerParams p;
  p.query = heads("query");
  p.key = heads("key");
  p.value = heads("value");
  p.output = params.add_affine_weight(prefix + ".output", d, d, rng);
  p.transition_in_w = params.add_affine_weight(prefix + ".transition_in.w", d, config.transition_width, rng);
  p.transition_in_b = params.add_constant_init(prefix + ".transition_in.b", 1, config.transition_width, 0.0);
  p.transition_out_w = params.add_affine_weight(prefix + ".transition_out.w", config.transition_width, d, rng);
  p.transition_out_b = params.add_constant_init(prefix + ".transition_out.b", 1, d, 0.0);
  p.halt_w = params.add_affine_weight(prefix + ".halt.w", d, 1, rng);
  p.halt_b = params.add_constant_init(prefix + ".halt.b", 1, 1, 1.0);
  p.mixer = params.add_affine_weight(prefix + ".mixer", config.max_len * d, d, rng);
  return p;
}

Matrix coordinate_embedding(int step, Index len, Index width) {
  Matrix p(len, width);
  auto code = [width](Scalar at, Index c) {
    const Scalar rate = std::pow(10000.0, -static_cast<Scalar>(2 * (c / 2)) / static_cast<Scalar>(width));
    return c % 2 == 0 ? std::sin(at * rate) : std::cos(at * rate);
  };
  for (Index r = 0; r < len; ++r)
    for (Index c = 0; c < width; ++c)
      p(r, c) = code(static_cast<Scalar>(r), c) + code(static_cast<Scalar>(step), c);
  return p;
}

AttentionResult mhsa(const Tensor& x, const TransformerParams& params, const TransformerConfig& config,
                     std::span<const bool> mask, Index batch) {
  const Tensor q = matmul(x, params.query);
  const Tensor k = matmul(x, params.key);
  const Tensor v = matmul(x, params.value);
  const Scalar key_width = config.literal_scale ? static_cast<Scalar>(config.width)
                                                : static_cast<Scalar>(config.width / config.heads);
  AttentionResult result;
  const Tensor heads = attention(q, k, v, batch, config.heads, mask, 1.0 / std::sqrt(key_width), &result.weights);
  result.output = matmul(heads, params.output);
  return result;
}

Tensor transformer_step(const Tensor& e, int step, const TransformerParams& params,
                        const TransformerConfig& config, std::span<const bool> mask, Index batch,
                        bool training, Rng* rng) {
  if (batch <= 0 || e.rows() % batch != 0)
    throw Error(ErrorCode::kShapeMismatch, "transformer_step: " + shape_string(e.shape()) +
                                               " is not " + std::to_string(batch) + " sequences");
  if (training && !rng) throw Error(ErrorCode::kInvalidConfig, "training step needs a generator");
  const Index len = e.rows() / batch;
  const Matrix p = coordinate_embedding(step, len, e.cols()).replicate(batch, 1);
  const Tensor x = add(e, Tensor::constant(p));

  Rng unused;
  Rng& r = rng ? *rng : unused;
  const Tensor attended = dropout(mhsa(x, params, config, mask, batch).output, config.dropout, training, r);
  const Tensor a = layer_norm(add(x, attended));

  const Tensor hidden = relu(add(matmul(a, params.transition_in_w), params.transition_in_b));
  const Tensor transition =
      dropout(add(matmul(hidden, params.transition_out_w), params.transition_out_b), config.dropout, training, r);
  return layer_norm(add(a, transition));
}

ActResult act_run(const Tensor& e0, const TransformerParams& params, const TransformerConfig& config,
                  std::span<const bool> mask, Index batch, bool training, Rng* rng) {
  const Index n = e0.rows();
  if (static_cast<Index>(mask.size()) != n)
    throw Error(ErrorCode::kShapeMismatch, "act_run: mask of " + std::to_string(mask.size()) +
                                               " for " + std::to_string(n) + " positions");
  const Scalar threshold = 1.0 - config.act_epsilon;

  std::vector<bool> halted(static_cast<std::size_t>(n));
  std::vector<Scalar> accumulated(static_cast<std::size_t>(n), 0.0);
  ActResult result;
  result.halt_steps.assign(static_cast<std::size_t>(n), 0);
  result.remainders.assign(static_cast<std::size_t>(n), 0.0);
  std::size_t valid = 0;
  for (Index i = 0; i < n; ++i) {
    halted[static_cast<std::size_t>(i)] = !mask[static_cast<std::size_t>(i)];
    valid += mask[static_cast<std::size_t>(i)] ? 1 : 0;
  }

  Tensor state = e0;
  // Halting probabilities that end up inside a remainder, one term per step.
  std::vector<Tensor> spent;
  for (int t = 1; t <= config.max_steps; ++t) {
    const auto running = std::make_unique<bool[]>(static_cast<std::size_t>(n));
    bool any = false;
    for (std::size_t i = 0; i < halted.size(); ++i) {
      running[i] = !halted[i];
      any = any || running[i];
    }
    if (!any) break;

    const Tensor next = transformer_step(state, t, params, config, mask, batch, training, rng);
    state = select_rows(std::span<const bool>(running.get(), static_cast<std::size_t>(n)), next, state);
    const Tensor p = sigmoid(add(matmul(next, params.halt_w), params.halt_b));

    Matrix continuing = Matrix::Zero(n, 1);
    for (std::size_t i = 0; i < halted.size(); ++i) {
      if (!running[i]) continue;
      const Scalar pi = p.value()(static_cast<Index>(i), 0);
      if (accumulated[i] + pi >= threshold || t == config.max_steps) {
        halted[i] = true;
        result.halt_steps[i] = t;
        result.remainders[i] = 1.0 - accumulated[i];
      } else {
        accumulated[i] += pi;
        continuing(static_cast<Index>(i), 0) = 1.0;
      }
    }
    if (continuing.sum() > 0) spent.push_back(sum(mul(p, Tensor::constant(std::move(continuing)))));
  }

  Matrix keep = Matrix::Zero(n, 1);
  Scalar base = 0;
  for (std::size_t i = 0; i < halted.size(); ++i) {
    if (!mask[i]) continue;
    keep(static_cast<Index>(i), 0) = 1.0;
    base += result.halt_steps[i] + 1.0;
    result.mean_steps += result.halt_steps[i];
  }
  const Scalar denom = valid ? static_cast<Scalar>(valid) : 1.0;
  result.mean_steps /= denom;
  result.state = mul(state, Tensor::constant(std::move(keep)));

  // ponder = mean(N_i + R_i), R_i = 1 - sum of probabilities before halting
  Tensor ponder = Tensor::scalar(base / denom);
  for (const auto& s : spent) ponder = sub(ponder, scale(s, 1.0 / denom));
  result.ponder = ponder;
  result.penalty = scale(ponder, config.ponder_cost);
  return result;
}

Tensor dynamic_embed(const Tensor& ef, const Tensor& mixer, Index batch) {
  if (batch <= 0 || ef.rows() % batch != 0 || (ef.rows() / batch) * ef.cols() != mixer.rows())
    throw Error(ErrorCode::kShapeMismatch, "dynamic_embed: state " + shape_string(ef.shape()) +
                                               " in " + std::to_string(batch) + " sequences vs mixer " +
                                               shape_string(mixer.shape()));
  return matmul(reshape(ef, batch, ef.rows() / batch * ef.cols()), mixer);
}

}  // namespace t2v::dynamics
