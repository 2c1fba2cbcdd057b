#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace t2v::numeric {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;
using Shape = std::array<Index, 2>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the eager differentiation graph. `backward` reads this
// node's grad and accumulates into the inputs' grads.
struct Node {
  Matrix value;
  Matrix grad;  // empty until touched by backward
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer();
};

// Dense rank-2 value (vectors are 1 x n) participating in the graph. Copies
// share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }
  static Tensor scalar(Scalar x);
  static Tensor zeros(Index rows, Index cols) { return constant(Matrix::Zero(rows, cols)); }

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Shape shape() const { return {rows(), cols()}; }
  const Matrix& value() const { return node_->value; }
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient of the last backward pass; zeros if this tensor was unreachable.
  Matrix grad() const;
  bool has_grad() const { return node_->grad.size() > 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  // Leaf-only mutation, used by optimisers and checkpoint loading.
  Matrix& mutable_value() { return node_->value; }

  const NodePtr& node() const { return node_; }

  // Builds a result node; the backward closure is dropped when no input
  // requires a gradient.
  static Tensor from_op(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> backward);

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

std::string shape_string(const Shape& s);

// Reverse-mode sweep from a 1 x 1 loss. Gradients accumulate into every
// reachable tensor that requires one (leaves keep them until zero_grad).
void backward(const Tensor& loss);

}  // namespace t2v::numeric
