// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle (shared ownership) onto a graph node. Operations
// on tensors that require gradients record their adjoint on the output node;
// backward() linearises the reachable graph into a ComputationTape and replays
// it in reverse. A tape is consumed by backward: intermediate adjoint closures
// are released, and a second backward through the same nodes is a StateError.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cvm::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;
  const char* op = "leaf";

  std::span<double> grad_buffer();  // allocates zeros on first use
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), 1.0, requires_grad); }
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
  /// Extent of one axis; negative axes count from the back.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the values. Only leaves may be mutated.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  NodePtr node_;
};

/// Reverse-topological replay order of a graph, root last.
struct ComputationTape {
  std::vector<NodePtr> order;  // topological: every node after its parents
};

/// Linearise the differentiable part of the graph reachable from root.
ComputationTape record_tape(const Tensor& root);

/// Populate gradients of all requires_grad leaves reachable from a scalar root.
/// Throws ContractError for a non-scalar root, StateError when the tape has
/// already been consumed by an earlier backward.
void backward(const Tensor& root);

/// Whether operations record adjoints. Thread-local; on by default.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Build the result of a primitive. The adjoint is only attached when grad mode
/// is on and at least one input requires gradients.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   const char* op, BackwardFn backward);

}  // namespace cvm::ad
