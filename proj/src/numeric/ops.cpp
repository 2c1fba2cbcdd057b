#include "table2vec/numeric/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "table2vec/error.hpp"

namespace t2v::numeric {
namespace {

void accumulate(Node& n, std::size_t input, const Matrix& g) {
  Node& in = *n.inputs[input];
  if (in.requires_grad) in.grad_buffer() += g;
}

bool wants(const Node& n, std::size_t input) { return n.inputs[input]->requires_grad; }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": incompatible shapes " +
                                             shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

enum class Bcast { kSame, kRow, kCol, kScalar };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::kCol;
  shape_error(op, a, b);
}

Matrix expand(const Matrix& b, Bcast kind, Index rows, Index cols) {
  switch (kind) {
    case Bcast::kSame: return b;
    case Bcast::kRow: return b.replicate(rows, 1);
    case Bcast::kCol: return b.replicate(1, cols);
    case Bcast::kScalar: return Matrix::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Matrix reduce(const Matrix& g, Bcast kind) {
  switch (kind) {
    case Bcast::kSame: return g;
    case Bcast::kRow: return g.colwise().sum();
    case Bcast::kCol: return g.rowwise().sum();
    case Bcast::kScalar: return Matrix::Constant(1, 1, g.sum());
  }
  return g;
}

void check_axis(int axis) {
  if (axis != 0 && axis != 1)
    throw Error(ErrorCode::kShapeMismatch, "axis must be 0 or 1, got " + std::to_string(axis));
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    // vectorized exp clamps -inf to a denormal, so masked entries are zeroed
    y.row(i) = (x.row(i).array() == -std::numeric_limits<Scalar>::infinity())
                   .select(0.0, (x.row(i).array() - m).exp())
                   .matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Matrix out = a.value() * b.value();
  return Tensor::from_op(std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) accumulate(n, 0, n.grad * n.inputs[1]->value.transpose());
    if (wants(n, 1)) accumulate(n, 1, n.inputs[0]->value.transpose() * n.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Bcast kind = broadcast_kind("add", a, b);
  Matrix out = a.value() + expand(b.value(), kind, a.rows(), a.cols());
  return Tensor::from_op(std::move(out), {a, b}, [kind](Node& n) {
    accumulate(n, 0, n.grad);
    if (wants(n, 1)) accumulate(n, 1, reduce(n.grad, kind));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Bcast kind = broadcast_kind("sub", a, b);
  Matrix out = a.value() - expand(b.value(), kind, a.rows(), a.cols());
  return Tensor::from_op(std::move(out), {a, b}, [kind](Node& n) {
    accumulate(n, 0, n.grad);
    if (wants(n, 1)) accumulate(n, 1, -reduce(n.grad, kind));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Bcast kind = broadcast_kind("mul", a, b);
  Matrix bx = expand(b.value(), kind, a.rows(), a.cols());
  Matrix out = a.value().cwiseProduct(bx);
  return Tensor::from_op(std::move(out), {a, b}, [kind, bx = std::move(bx)](Node& n) {
    if (wants(n, 0)) accumulate(n, 0, n.grad.cwiseProduct(bx));
    if (wants(n, 1)) accumulate(n, 1, reduce(n.grad.cwiseProduct(n.inputs[0]->value), kind));
  });
}

Tensor scale(const Tensor& a, Scalar s) {
  return Tensor::from_op(a.value() * s, {a}, [s](Node& n) { accumulate(n, 0, n.grad * s); });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat_cols of nothing");
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) shape_error("concat_cols", parts[0], p);
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    offsets.push_back(at);
    at += p.cols();
  }
  return Tensor::from_op(std::move(out), {parts.begin(), parts.end()}, [offsets](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i)
      if (wants(n, i)) accumulate(n, i, n.grad.middleCols(offsets[i], n.inputs[i]->value.cols()));
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat_rows of nothing");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) shape_error("concat_rows", parts[0], p);
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    offsets.push_back(at);
    at += p.rows();
  }
  return Tensor::from_op(std::move(out), {parts.begin(), parts.end()}, [offsets](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i)
      if (wants(n, i)) accumulate(n, i, n.grad.middleRows(offsets[i], n.inputs[i]->value.rows()));
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw Error(ErrorCode::kShapeMismatch, "slice_cols [" + std::to_string(start) + ", +" +
                                               std::to_string(count) + ") of " + shape_string(a.shape()));
  return Tensor::from_op(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
    Matrix g = Matrix::Zero(n.inputs[0]->value.rows(), n.inputs[0]->value.cols());
    g.middleCols(start, count) = n.grad;
    accumulate(n, 0, g);
  });
}

Tensor slice_rows(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw Error(ErrorCode::kShapeMismatch, "slice_rows [" + std::to_string(start) + ", +" +
                                               std::to_string(count) + ") of " + shape_string(a.shape()));
  return Tensor::from_op(a.value().middleRows(start, count), {a}, [start, count](Node& n) {
    Matrix g = Matrix::Zero(n.inputs[0]->value.rows(), n.inputs[0]->value.cols());
    g.middleRows(start, count) = n.grad;
    accumulate(n, 0, g);
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return Tensor::from_op(std::move(out), {a}, [](Node& n) { accumulate(n, 0, n.grad.transpose()); });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.rows() * a.cols())
    throw Error(ErrorCode::kShapeMismatch, "reshape " + shape_string(a.shape()) + " to " +
                                               shape_string({rows, cols}));
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return Tensor::from_op(std::move(out), {a}, [](Node& n) {
    const Matrix& in = n.inputs[0]->value;
    accumulate(n, 0, Eigen::Map<const Matrix>(n.grad.data(), in.rows(), in.cols()));
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return Tensor::from_op(std::move(out), {a}, [](Node& n) {
    const Matrix& x = n.inputs[0]->value;
    accumulate(n, 0, Matrix((x.array() > 0.0).select(n.grad.array(), 0.0).matrix()));
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](Scalar x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  Matrix y = out;
  return Tensor::from_op(std::move(out), {a}, [y = std::move(y)](Node& n) {
    accumulate(n, 0, n.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Tensor softmax(const Tensor& a, int axis) {
  check_axis(axis);
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  Matrix y = softmax_rows(a.value());
  Matrix out = y;
  return Tensor::from_op(std::move(out), {a}, [y = std::move(y)](Node& n) {
    const Eigen::VectorXd dot = n.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.cwiseProduct(Matrix(n.grad.colwise() - dot));
    accumulate(n, 0, g);
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  check_axis(axis);
  if (axis == 0) return transpose(log_softmax(transpose(a), 1));
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    const Scalar lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = (x.row(i).array() - lse).matrix();
  }
  Matrix p = out.array().exp().matrix();
  return Tensor::from_op(std::move(out), {a}, [p = std::move(p)](Node& n) {
    const Eigen::VectorXd gs = n.grad.rowwise().sum();
    Matrix g = n.grad - Matrix(p.array().colwise() * gs.array());
    accumulate(n, 0, g);
  });
}

Tensor layer_norm(const Tensor& a, int axis, Scalar epsilon) {
  check_axis(axis);
  if (axis == 0) return transpose(layer_norm(transpose(a), 1, epsilon));
  const Matrix& x = a.value();
  const Index n_cols = x.cols();
  Matrix xhat(x.rows(), n_cols);
  Eigen::VectorXd inv_sigma(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mu = x.row(i).mean();
    const auto centred = (x.row(i).array() - mu).eval();
    const Scalar var = centred.square().mean();
    inv_sigma[i] = 1.0 / std::sqrt(var + epsilon);
    xhat.row(i) = (centred * inv_sigma[i]).matrix();
  }
  Matrix out = xhat;
  return Tensor::from_op(std::move(out), {a}, [xhat = std::move(xhat), inv_sigma](Node& n) {
    Matrix g(n.grad.rows(), n.grad.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const Scalar mg = n.grad.row(i).mean();
      const Scalar mgx = n.grad.row(i).cwiseProduct(xhat.row(i)).mean();
      g.row(i) = (inv_sigma[i] * (n.grad.row(i).array() - mg - xhat.row(i).array() * mgx)).matrix();
    }
    accumulate(n, 0, g);
  });
}

Tensor dropout(const Tensor& a, Scalar rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw Error(ErrorCode::kInvalidConfig, "dropout rate must be < 1");
  Matrix keep(a.rows(), a.cols());
  const Scalar inv = 1.0 / (1.0 - rate);
  for (Index i = 0; i < keep.size(); ++i) keep.data()[i] = uniform01(rng) >= rate ? inv : 0.0;
  Matrix out = a.value().cwiseProduct(keep);
  return Tensor::from_op(std::move(out), {a}, [keep = std::move(keep)](Node& n) {
    accumulate(n, 0, n.grad.cwiseProduct(keep));
  });
}

Tensor sum(const Tensor& a) {
  return Tensor::from_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
    const Matrix& in = n.inputs[0]->value;
    accumulate(n, 0, Matrix::Constant(in.rows(), in.cols(), n.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  const auto count = static_cast<Scalar>(a.value().size());
  return Tensor::from_op(Matrix::Constant(1, 1, a.value().sum() / count), {a}, [count](Node& n) {
    const Matrix& in = n.inputs[0]->value;
    accumulate(n, 0, Matrix::Constant(in.rows(), in.cols(), n.grad(0, 0) / count));
  });
}

Tensor max(const Tensor& a, int axis, std::span<const bool> row_mask) {
  check_axis(axis);
  const Matrix& x = a.value();
  if (!row_mask.empty() && static_cast<Index>(row_mask.size()) != x.rows())
    throw Error(ErrorCode::kShapeMismatch, "max: mask of " + std::to_string(row_mask.size()) +
                                               " rows for " + shape_string(a.shape()));
  auto valid = [&](Index r) { return row_mask.empty() || row_mask[static_cast<std::size_t>(r)]; };

  if (axis == 0) {
    Matrix out = Matrix::Zero(1, x.cols());
    std::vector<Index> arg(static_cast<std::size_t>(x.cols()), -1);
    for (Index r = 0; r < x.rows(); ++r) {
      if (!valid(r)) continue;
      for (Index c = 0; c < x.cols(); ++c) {
        auto& best = arg[static_cast<std::size_t>(c)];
        if (best < 0 || x(r, c) > x(best, c)) best = r;
      }
    }
    for (Index c = 0; c < x.cols(); ++c)
      if (arg[static_cast<std::size_t>(c)] >= 0) out(0, c) = x(arg[static_cast<std::size_t>(c)], c);
    return Tensor::from_op(std::move(out), {a}, [arg = std::move(arg)](Node& n) {
      const Matrix& in = n.inputs[0]->value;
      Matrix g = Matrix::Zero(in.rows(), in.cols());
      for (Index c = 0; c < in.cols(); ++c)
        if (arg[static_cast<std::size_t>(c)] >= 0) g(arg[static_cast<std::size_t>(c)], c) = n.grad(0, c);
      accumulate(n, 0, g);
    });
  }

  Matrix out = Matrix::Zero(x.rows(), 1);
  std::vector<Index> arg(static_cast<std::size_t>(x.rows()), -1);
  for (Index r = 0; r < x.rows(); ++r) {
    if (!valid(r) || x.cols() == 0) continue;
    Index best = 0;
    for (Index c = 1; c < x.cols(); ++c)
      if (x(r, c) > x(r, best)) best = c;
    arg[static_cast<std::size_t>(r)] = best;
    out(r, 0) = x(r, best);
  }
  return Tensor::from_op(std::move(out), {a}, [arg = std::move(arg)](Node& n) {
    const Matrix& in = n.inputs[0]->value;
    Matrix g = Matrix::Zero(in.rows(), in.cols());
    for (Index r = 0; r < in.rows(); ++r)
      if (arg[static_cast<std::size_t>(r)] >= 0) g(r, arg[static_cast<std::size_t>(r)]) = n.grad(r, 0);
    accumulate(n, 0, g);
  });
}

Tensor max_elementwise(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "max_elementwise of nothing");
  for (const auto& p : parts)
    if (p.shape() != parts[0].shape()) shape_error("max_elementwise", parts[0], p);
  if (parts.size() == 1) return parts[0];
  Matrix out = parts[0].value();
  std::vector<unsigned> arg(static_cast<std::size_t>(out.size()), 0);
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const Scalar* d = parts[k].value().data();
    for (Index i = 0; i < out.size(); ++i) {
      if (d[i] > out.data()[i]) {
        out.data()[i] = d[i];
        arg[static_cast<std::size_t>(i)] = static_cast<unsigned>(k);
      }
    }
  }
  return Tensor::from_op(std::move(out), {parts.begin(), parts.end()}, [arg = std::move(arg)](Node& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!wants(n, k)) continue;
      Matrix g = Matrix::Zero(n.grad.rows(), n.grad.cols());
      for (Index i = 0; i < g.size(); ++i)
        if (arg[static_cast<std::size_t>(i)] == k) g.data()[i] = n.grad.data()[i];
      accumulate(n, k, g);
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw Error(ErrorCode::kIdOutOfRange, "id " + std::to_string(ids[i]) + " outside table of " +
                                                std::to_string(table.rows()) + " rows");
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return Tensor::from_op(std::move(out), {table}, [idx = std::move(idx)](Node& n) {
    Matrix& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<Index>(i));
  });
}

Tensor select_rows(std::span<const bool> take_a, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("select_rows", a, b);
  if (static_cast<Index>(take_a.size()) != a.rows())
    throw Error(ErrorCode::kShapeMismatch, "select_rows: mask of " + std::to_string(take_a.size()) +
                                               " rows for " + shape_string(a.shape()));
  Matrix out = b.value();
  std::vector<bool> mask(take_a.begin(), take_a.end());
  for (Index r = 0; r < out.rows(); ++r)
    if (mask[static_cast<std::size_t>(r)]) out.row(r) = a.value().row(r);
  return Tensor::from_op(std::move(out), {a, b}, [mask = std::move(mask)](Node& n) {
    Matrix ga = n.grad, gb = n.grad;
    for (Index r = 0; r < n.grad.rows(); ++r) {
      if (mask[static_cast<std::size_t>(r)]) gb.row(r).setZero();
      else ga.row(r).setZero();
    }
    accumulate(n, 0, ga);
    accumulate(n, 1, gb);
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Index batch, Index heads,
                 std::span<const bool> key_mask, Scalar scale, Matrix* weights) {
  if (q.shape() != k.shape()) shape_error("attention", q, k);
  if (q.shape() != v.shape()) shape_error("attention", q, v);
  if (batch <= 0 || heads <= 0 || q.rows() % batch != 0 || q.cols() % heads != 0)
    throw Error(ErrorCode::kShapeMismatch, "attention: " + shape_string(q.shape()) +
                                               " does not split into " + std::to_string(batch) +
                                               " sequences x " + std::to_string(heads) + " heads");
  if (static_cast<Index>(key_mask.size()) != q.rows())
    throw Error(ErrorCode::kShapeMismatch, "attention: mask length " + std::to_string(key_mask.size()) +
                                               " for " + std::to_string(q.rows()) + " positions");
  const Index len = q.rows() / batch;
  const Index dh = q.cols() / heads;
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();

  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(batch * heads));
  Matrix out = Matrix::Zero(q.rows(), q.cols());
  constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();
  for (Index b = 0; b < batch; ++b) {
    const Index r0 = b * len;
    bool any = false;
    for (Index j = 0; j < len; ++j) any = any || key_mask[static_cast<std::size_t>(r0 + j)];
    if (!any)
      throw Error(ErrorCode::kAllMaskedInput, "sequence " + std::to_string(b) + " has no valid position");
    for (Index h = 0; h < heads; ++h) {
      const auto qb = Q.block(r0, h * dh, len, dh);
      const auto kb = K.block(r0, h * dh, len, dh);
      Matrix s = (qb * kb.transpose()) * scale;
      for (Index j = 0; j < len; ++j)
        if (!key_mask[static_cast<std::size_t>(r0 + j)]) s.col(j).setConstant(kNegInf);
      Matrix p = softmax_rows(s);
      out.block(r0, h * dh, len, dh) = p * V.block(r0, h * dh, len, dh);
      probs->push_back(std::move(p));
    }
  }
  if (weights) {
    weights->resize(batch * heads * len, len);
    for (std::size_t i = 0; i < probs->size(); ++i)
      weights->middleRows(static_cast<Index>(i) * len, len) = (*probs)[i];
  }

  return Tensor::from_op(std::move(out), {q, k, v}, [probs, batch, heads, len, dh, scale](Node& n) {
    const Matrix& Q = n.inputs[0]->value;
    const Matrix& K = n.inputs[1]->value;
    const Matrix& V = n.inputs[2]->value;
    Matrix gq = Matrix::Zero(Q.rows(), Q.cols());
    Matrix gk = Matrix::Zero(K.rows(), K.cols());
    Matrix gv = Matrix::Zero(V.rows(), V.cols());
    for (Index b = 0; b < batch; ++b) {
      const Index r0 = b * len;
      for (Index h = 0; h < heads; ++h) {
        const Matrix& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
        const Matrix go = n.grad.block(r0, h * dh, len, dh);
        gv.block(r0, h * dh, len, dh) += p.transpose() * go;
        const Matrix gp = go * V.block(r0, h * dh, len, dh).transpose();
        const Eigen::VectorXd dot = gp.cwiseProduct(p).rowwise().sum();
        const Matrix gs = p.cwiseProduct(Matrix(gp.colwise() - dot)) * scale;
        gq.block(r0, h * dh, len, dh) += gs * K.block(r0, h * dh, len, dh);
        gk.block(r0, h * dh, len, dh) += gs.transpose() * Q.block(r0, h * dh, len, dh);
      }
    }
    accumulate(n, 0, gq);
    accumulate(n, 1, gk);
    accumulate(n, 2, gv);
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     std::span<const Scalar> class_weights) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw Error(ErrorCode::kShapeMismatch, "cross_entropy: " + std::to_string(labels.size()) +
                                               " labels for " + shape_string(logits.shape()));
  if (!class_weights.empty() && static_cast<Index>(class_weights.size()) != logits.cols())
    throw Error(ErrorCode::kShapeMismatch, "cross_entropy: " + std::to_string(class_weights.size()) +
                                               " class weights for " + std::to_string(logits.cols()) +
                                               " classes");
  const Matrix p = softmax_rows(logits.value());
  std::vector<Scalar> w(labels.size(), 0.0);
  Scalar total_w = 0, loss = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0) continue;
    if (y >= logits.cols())
      throw Error(ErrorCode::kIdOutOfRange, "label " + std::to_string(y) + " outside " +
                                                std::to_string(logits.cols()) + " classes");
    w[i] = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    total_w += w[i];
    const Index r = static_cast<Index>(i);
    const Scalar m = logits.value().row(r).maxCoeff();
    const Scalar lse = m + std::log((logits.value().row(r).array() - m).exp().sum());
    loss += w[i] * (lse - logits.value()(r, y));
  }
  const Scalar value = total_w > 0 ? loss / total_w : 0.0;
  std::vector<int> y(labels.begin(), labels.end());
  return Tensor::from_op(Matrix::Constant(1, 1, value), {logits},
                         [p, w = std::move(w), y = std::move(y), total_w](Node& n) {
                           if (total_w <= 0) return;
                           Matrix g = Matrix::Zero(p.rows(), p.cols());
                           const Scalar s = n.grad(0, 0) / total_w;
                           for (std::size_t i = 0; i < y.size(); ++i) {
                             if (y[i] < 0) continue;
                             const Index r = static_cast<Index>(i);
                             g.row(r) = p.row(r) * (w[i] * s);
                             g(r, y[i]) -= w[i] * s;
                           }
                           accumulate(n, 0, g);
                         });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mse", a, b);
  Matrix diff = a.value() - b.value();
  const auto count = static_cast<Scalar>(diff.size());
  const Scalar value = diff.squaredNorm() / count;
  return Tensor::from_op(Matrix::Constant(1, 1, value), {a, b}, [diff = std::move(diff), count](Node& n) {
    const Matrix g = diff * (2.0 * n.grad(0, 0) / count);
    accumulate(n, 0, g);
    if (wants(n, 1)) accumulate(n, 1, -g);
  });
}

}  // namespace t2v::numeric
