#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segattn/tensor.hpp"

namespace segattn {

using NodeId = std::size_t;

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kMatmul,
  kBatchedMatmul,
  kSoftmax,
  kSum,
  kMean,
  kMax,
  kReshape,
  kTranspose,
  kConv2d,
  kTransposedConv2d,
  kMaxPool2d,
  kDepthwiseConv2d,
  kConcat,
  kCrop,
  kPad,
  kSoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);

// Everything a node's backward rule may read or write. input_grads arrive
// zero-filled and shaped like the inputs; rules accumulate into them and may
// skip inputs for which wants(i) is false.
struct BackwardContext {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  std::span<Tensor> input_grads;
  std::span<const char> wanted;

  bool wants(std::size_t i) const { return wanted[i] != 0; }
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Append-only tape recorded during a forward pass. Inputs of a node always
// have smaller ids than the node itself, so a reverse sweep over ids is a
// valid reverse topological order.
class Graph {
 public:
  Var leaf(Tensor value, bool requires_grad = true);
  Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps in reverse id order. Clears any
  // gradients from a previous call.
  void backward(Var loss);

  // Gradient of the last backward() w.r.t. a node, or nullptr if the node
  // was not reached.
  const Tensor* grad(NodeId id) const;
  Tensor grad_or_zeros(Var v) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

// Reverse-mode sweep returning the gradient of every reached node (nullopt
// elsewhere).
std::vector<std::optional<Tensor>> backward(Graph& graph, Var loss);

// Elementwise ops. Binary operands must have equal shapes or one of them
// must hold a single element, which is broadcast.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);

Var matmul(Var a, Var b);          // (m x k) . (k x n)
Var batched_matmul(Var a, Var b);  // (b x m x k) . (b x k x n)

Var softmax_lastdim(Var a);

enum class ReduceKind { kSum, kMean, kMax };
// Reduces every element (rank-0 result) or one axis (axis removed).
Var reduce(ReduceKind kind, Var a, std::optional<std::size_t> axis = std::nullopt);
inline Var sum(Var a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(ReduceKind::kSum, a, axis);
}
inline Var mean(Var a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(ReduceKind::kMean, a, axis);
}
inline Var max(Var a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(ReduceKind::kMax, a, axis);
}

Var reshape(Var a, Shape shape);
Var transpose(Var a, std::vector<std::size_t> perm);
// Reverses the last two axes of a rank-2 tensor.
Var transpose(Var a);

// Test hook: when enabled, relu's backward rule is deliberately wrong so
// that the gradient checker can be shown to fail.
void set_backward_fault_injection(bool enabled);
bool backward_fault_injection();

// Central finite-difference check of autodiff gradients.
struct GradCheckFailure {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<double> input_max_rel_err;
  std::vector<GradCheckFailure> failures;
  bool pass = true;
};

using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

// An entry passes when |a - n| / max(floor, |a| + |n|) < tol. Raising floor
// judges gradients smaller than floor by absolute error instead, which keeps
// rounding noise in deep compositions from counting as a failure.
GradCheckReport grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double step,
                           double tol, double floor = 1e-8);

double relative_error(double analytic, double numeric, double floor = 1e-8);

}  // namespace segattn
