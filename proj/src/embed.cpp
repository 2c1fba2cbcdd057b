#include "table2vec/embed.hpp"

#include "table2vec/error.hpp"

namespace t2v::embed {

Tensor categorical_embed(std::span<const int> ids, std::span<const Tensor> tables) {
  if (ids.size() != tables.size())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(ids.size()) + " ids for " +
                                                std::to_string(tables.size()) + " lookup tables");
  std::vector<Tensor> rows;
  rows.reserve(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j)
    rows.push_back(numeric::gather_rows(tables[j], std::span<const int>(&ids[j], 1)));
  return numeric::concat_rows(rows);
}

Tensor positional_numeric_embed(std::span<const double> values, const Tensor& m) {
  if (static_cast<Index>(values.size()) != m.rows())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(values.size()) + " values for " +
                                                std::to_string(m.rows()) + " embedding rows");
  Matrix v(m.rows(), 1);
  for (Index i = 0; i < m.rows(); ++i) v(i, 0) = values[static_cast<std::size_t>(i)];
  return numeric::mul(m, Tensor::constant(std::move(v)));
}

MaxConcat max_concat(const Tensor& e, std::span<const bool> row_mask) {
  bool any = e.rows() > 0;
  if (!row_mask.empty()) {
    any = false;
    for (bool b : row_mask) any = any || b;
  }
  if (!any) return {Tensor::zeros(1, e.cols()), true};
  return {numeric::max(e, 0, row_mask), false};
}

Tensor categorical_embed_max(std::span<const std::vector<int>> ids_by_feature,
                             std::span<const Tensor> tables) {
  if (ids_by_feature.size() != tables.size() || tables.empty())
    throw Error(ErrorCode::kLengthMismatch, std::to_string(ids_by_feature.size()) +
                                                " id columns for " + std::to_string(tables.size()) +
                                                " lookup tables");
  std::vector<Tensor> parts;
  parts.reserve(tables.size());
  for (std::size_t j = 0; j < tables.size(); ++j)
    parts.push_back(numeric::gather_rows(tables[j], ids_by_feature[j]));
  return numeric::max_elementwise(parts);
}

Tensor numeric_embed_max(const Matrix& values, const Tensor& m) {
  if (values.cols() != m.rows() || m.rows() == 0)
    throw Error(ErrorCode::kLengthMismatch, std::to_string(values.cols()) + " value columns for " +
                                                std::to_string(m.rows()) + " embedding rows");
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    const Tensor column = Tensor::constant(values.col(i));
    parts.push_back(numeric::matmul(column, numeric::slice_rows(m, i, 1)));
  }
  return numeric::max_elementwise(parts);
}

}  // namespace t2v::embed
