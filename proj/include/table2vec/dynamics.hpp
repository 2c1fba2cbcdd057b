#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "table2vec/numeric/ops.hpp"
#include "table2vec/numeric/optim.hpp"

namespace t2v::dynamics {

using numeric::Index;
using numeric::Matrix;
using numeric::Scalar;
using numeric::Tensor;

struct TransformerConfig {
  Index max_len = 8;           // n_s; longer histories keep the most recent records
  Index width = 32;            // n_e
  Index heads = 4;             // k
  int max_steps = 4;           // T_max
  Scalar act_epsilon = 0.01;   // halt once accumulated probability >= 1 - epsilon
  Scalar ponder_cost = 0.01;   // tau
  Index transition_width = 64;
  Scalar dropout = 0.1;
  bool literal_scale = false;  // scale scores by sqrt(n_e) instead of sqrt(n_e / k)

  void validate() const;
};

void to_json(nlohmann::json& j, const TransformerConfig& c);
void from_json(const nlohmann::json& j, TransformerConfig& c);

// Weights shared by every refinement step. W^Q, W^K and W^V are stored as
// n_e x n_e with column block i holding head i's n_e x (n_e / k) map.
struct TransformerParams {
  Tensor query, key, value, output;
  Tensor transition_in_w, transition_in_b, transition_out_w, transition_out_b;
  Tensor halt_w, halt_b;
  Tensor mixer;  // W^D, (n_s * n_e) x n_e

  static TransformerParams create(numeric::ParameterSet& params, const std::string& prefix,
                                  const TransformerConfig& config, Rng& rng);
};

// Constant (position, time) code for refinement step `step` >= 1: a
// sinusoidal position encoding plus a sinusoidal encoding of the step,
// broadcast over rows.
Matrix coordinate_embedding(int step, Index len, Index width);

struct AttentionResult {
  Tensor output;   // (batch * len) x n_e
  Matrix weights;  // (batch * heads * len) x len, rows sum to 1 over valid keys
};

// Multi-head self-attention over `batch` stacked sequences; masked keys get
// no weight. Throws kAllMaskedInput when a sequence has no valid position.
AttentionResult mhsa(const Tensor& x, const TransformerParams& params, const TransformerConfig& config,
                     std::span<const bool> mask, Index batch = 1);

// One refinement: A = LN(X + MHSA(X)), out = LN(A + TS(A)), X = E + P(step).
// `rng` is required only when training (dropout).
Tensor transformer_step(const Tensor& e, int step, const TransformerParams& params,
                        const TransformerConfig& config, std::span<const bool> mask, Index batch = 1,
                        bool training = false, Rng* rng = nullptr);

struct ActResult {
  Tensor state;                 // E^f, padded rows zeroed
  Tensor ponder;                // 1 x 1 mean over valid positions of (steps + remainder)
  Tensor penalty;               // ponder_cost * ponder
  std::vector<int> halt_steps;  // h_i per position, 0 for padded positions
  std::vector<Scalar> remainders;
  Scalar mean_steps = 0;
};

// Adaptive computation time: each position refines until its accumulated
// halting probability reaches 1 - epsilon or max_steps, and keeps the state
// of its halting step. The halting pattern is treated as fixed in backward.
ActResult act_run(const Tensor& e0, const TransformerParams& params, const TransformerConfig& config,
                  std::span<const bool> mask, Index batch = 1, bool training = false,
                  Rng* rng = nullptr);

// e^d = flatten(E^f) * W^D per sequence: batch x n_e.
Tensor dynamic_embed(const Tensor& ef, const Tensor& mixer, Index batch = 1);

}  // namespace t2v::dynamics
