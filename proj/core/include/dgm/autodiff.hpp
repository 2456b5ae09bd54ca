#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm::ad {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Add,
  Subtract,
  Multiply,
  Relu,
  Softplus,
  Exp,
  Log,
  Negate,
  Sum,
  Mean,
  Slice,
  Concat,
  Broadcast,
  Square,
  GaussianLogDensity,
  // Extensions used by the models.
  SumLast,
  Scale,
  AddScalar,
  Clamp,
  SelectColumns,
  RepeatRows,
  Reshape,
  LogSumExp,
  RqSpline,
};

std::string_view op_name(OpKind kind);

/// Static parameters of an op. Only the fields an op reads matter.
struct OpAttrs {
  double scalar = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t repeat = 1;
  Shape shape;
  std::vector<std::size_t> indices;
  int bins = 0;
  double tail_bound = 0.0;
};

/// Evaluates `kind` on `inputs`. When any input is taped the result is
/// recorded on that tape; untaped inputs enter as constants.
Tensor apply(OpKind kind, const std::vector<const Tensor*>& inputs, const OpAttrs& attrs = {});

/// Gradients returned by Tape::backward, indexed by tape node.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> per_node) : grads_(std::move(per_node)) {}

  /// d loss / d leaf. Zero-filled when the leaf does not reach the loss.
  const Tensor& of(const Tensor& leaf) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};

/// Append-only trace of a computation. Single-owner; not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a differentiable input.
  Tensor leaf(const Tensor& value);
  /// Records a value that receives no gradient.
  Tensor constant(const Tensor& value);

  Gradients backward(const Tensor& loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(int node) const { return nodes_.at(node).kind; }
  const std::vector<int>& parents(int node) const { return nodes_.at(node).parents; }
  const Tensor& value(int node) const { return nodes_.at(node).value; }

  /// Overwrites the stored value of a leaf (shape must match); call
  /// replay() afterwards to refresh everything downstream.
  void set_leaf(const Tensor& leaf, const Tensor& value);
  /// Re-executes every recorded op in order from the stored leaf values.
  void replay();

 private:
  struct Node {
    OpKind kind;
    std::vector<int> parents;
    OpAttrs attrs;
    Tensor value;
    bool requires_grad = false;
  };

  friend Tensor apply(OpKind, const std::vector<const Tensor*>&, const OpAttrs&);
  Tensor push(OpKind kind, std::vector<int> parents, OpAttrs attrs, Tensor value, bool requires_grad);
  Tensor handle(int node) const;

  std::vector<Node> nodes_;
};

// Convenience wrappers. Binary elementwise ops broadcast the operand whose
// shape is a suffix of the other's (or that has one element).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_last(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<const Tensor*>& parts);
Tensor concat(const Tensor& a, const Tensor& b);
Tensor select_columns(const Tensor& x, std::vector<std::size_t> indices);
Tensor broadcast(const Tensor& x, Shape shape);
Tensor repeat_rows(const Tensor& x, std::size_t times);
Tensor reshape(const Tensor& x, Shape shape);
Tensor logsumexp_last(const Tensor& x);
/// Row-wise log N(x; mean, diag(exp(logvar))), summed over the last axis.
Tensor gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& logvar);
/// Fused rational-quadratic spline. Returns (n, 2m): first m columns are
/// the transformed values, last m are log|dy/dx|.
Tensor rq_spline_transform(const Tensor& x, const Tensor& raw_params, int bins, double tail_bound);

}  // namespace dgm::ad
