// SPDX-License-Identifier: Apache-2.0
#include "cvm/autodiff/tensor.hpp"

#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cvm/core/error.hpp"

namespace cvm::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto e : shape)
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<std::size_t>(ad::numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != static_cast<std::int64_t>(values.size()))
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return ad::numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw StateError("use of an undefined tensor");
  if (!node_->leaf) throw StateError("only leaf tensors may be mutated in place");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for shape " + shape_str(s));
  std::int64_t off = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v < 0 || v >= s[i]) throw DimensionError("index out of range for shape " + shape_str(s));
    off = off * s[i] + v;
    ++i;
  }
  return node_->value[static_cast<std::size_t>(off)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_) throw StateError("use of an undefined tensor");
  if (!node_->leaf) throw StateError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient; run backward first");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor::from(shape(), node_->value, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   const char* op, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (static_cast<std::int64_t>(node->value.size()) != ad::numel(node->shape))
    throw DimensionError(std::string(op) + ": internal shape/value mismatch");
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    for (const auto& t : inputs) {
      if (t.node()->consumed)
        throw StateError(std::string(op) + ": input belongs to a consumed tape");
      node->parents.push_back(t.node());
    }
    node->requires_grad = true;
    node->leaf = false;
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

ComputationTape record_tape(const Tensor& root) {
  ComputationTape tape;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS; the visited set guarantees each node appears once.
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  std::vector<Node*> order;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  // Recover owning pointers: the root is owned by the caller, every other node
  // is owned by one of its children's parent lists.
  tape.order.reserve(order.size());
  std::unordered_map<const Node*, NodePtr> owners;
  owners.emplace(root.node().get(), root.node());
  for (Node* n : order)
    for (const auto& p : n->parents) owners.emplace(p.get(), p);
  for (Node* n : order) tape.order.push_back(owners.at(n));
  return tape;
}

void backward(const Tensor& root) {
  if (!root.defined()) throw StateError("backward on an undefined tensor");
  if (root.numel() != 1)
    throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  if (root.node()->consumed) throw StateError("backward called twice on a consumed tape");
  if (!root.requires_grad()) throw ContractError("backward root does not depend on any requires_grad tensor");

  ComputationTape tape = record_tape(root);
  for (const auto& n : tape.order)
    if (n->consumed) throw StateError("graph contains nodes of a consumed tape");

  Node& r = *root.node();
  r.grad_buffer()[0] += 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    Node& n = **it;
    if (n.leaf) continue;
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
  for (const auto& n : tape.order) {
    if (n->leaf) continue;
    n->consumed = true;
    n->backward = nullptr;
    n->parents.clear();
    if (n.get() != &r) n->grad.clear();
  }
}

}  // namespace cvm::ad
