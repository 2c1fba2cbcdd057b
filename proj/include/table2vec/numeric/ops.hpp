#pragma once

#include <span>
#include <vector>

#include "table2vec/numeric/tensor.hpp"
#include "table2vec/random.hpp"

namespace t2v::numeric {

// Differentiable free functions over Tensor. Binary elementwise ops accept a
// right operand of the same shape, a 1 x n row, an m x 1 column or a 1 x 1
// scalar, broadcast against the left operand. Shape errors throw
// kShapeMismatch naming both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, Scalar s) { return scale(a, s); }

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor slice_rows(const Tensor& a, Index start, Index count);
Tensor transpose(const Tensor& a);
// Row-major reinterpretation; rows * cols must match.
Tensor reshape(const Tensor& a, Index rows, Index cols);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// axis = 1 normalises each row across its columns, axis = 0 each column.
Tensor softmax(const Tensor& a, int axis = 1);
Tensor log_softmax(const Tensor& a, int axis = 1);
// Zero mean, unit variance along `axis`; no affine.
Tensor layer_norm(const Tensor& a, int axis = 1, Scalar epsilon = 1e-5);

// Inverted dropout; identity when training is false or rate is 0.
Tensor dropout(const Tensor& a, Scalar rate, bool training, Rng& rng);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// axis = 0: 1 x n column maxima over the rows selected by `row_mask` (all
// rows when empty). axis = 1: m x 1 row maxima. Ties route the gradient to
// the lowest index. A mask with no valid row yields zeros.
Tensor max(const Tensor& a, int axis = 0, std::span<const bool> row_mask = {});

// Elementwise maximum over equally shaped tensors, ties to the first.
Tensor max_elementwise(std::span<const Tensor> parts);

// Rows of `table` selected by `ids`.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// Row i from `a` where take_a[i], else from `b`.
Tensor select_rows(std::span<const bool> take_a, const Tensor& a, const Tensor& b);

// Scaled dot-product attention over `batch` stacked sequences of length
// q.rows() / batch, with `heads` column blocks of q, k, v. Keys whose
// key_mask entry is false receive zero weight. When `weights` is non-null
// it receives the (batch * heads * len) x len attention matrix, head-major
// within each sequence.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Index batch, Index heads,
                 std::span<const bool> key_mask, Scalar scale, Matrix* weights = nullptr);

// Class-weighted mean cross-entropy of row-wise logits. Labels < 0 are
// unlabeled and skipped; the mean is over the weights of labeled rows.
// An all-unlabeled batch gives 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     std::span<const Scalar> class_weights = {});

// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace t2v::numeric
