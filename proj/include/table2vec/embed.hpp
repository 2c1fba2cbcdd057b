#pragma once

#include <span>
#include <vector>

#include "table2vec/numeric/ops.hpp"

namespace t2v::embed {

using numeric::Index;
using numeric::Matrix;
using numeric::Tensor;

// Lookup tables for one categorical branch (one vocab x d table per feature)
// and the position-based matrix M for one numerical branch (row i belongs to
// the i-th numerical feature of the branch, in schema order).
struct EmbeddingBank {
  Index width = 0;
  std::vector<Tensor> categorical;
  Tensor numeric;
};

// Row j is feature j's lookup of ids[j]. Missing (id 0) is a learned row.
Tensor categorical_embed(std::span<const int> ids, std::span<const Tensor> tables);

// Row i = values[i] * M_i; an imputed-missing value of 0 gives a zero row.
Tensor positional_numeric_embed(std::span<const double> values, const Tensor& m);

struct MaxConcat {
  Tensor vector;            // 1 x d
  bool degenerate = false;  // no valid row; vector is zero
};

// Columnwise maximum over the valid rows of E.
MaxConcat max_concat(const Tensor& e, std::span<const bool> row_mask = {});

// Batched forms used by the model: one item per row. Each feature is
// embedded for every item, then items are max-concatenated across features.
// ids_by_feature[j][item]; values is items x features.
Tensor categorical_embed_max(std::span<const std::vector<int>> ids_by_feature,
                             std::span<const Tensor> tables);
Tensor numeric_embed_max(const Matrix& values, const Tensor& m);

}  // namespace t2v::embed
