#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fpb/tensor.hpp"

namespace fpb {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Backward closure of an op. It reads `self.grad` and accumulates into the
// grads of `self.inputs` that require gradients.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward;

  // Lazily allocated accumulator.
  Tensor& grad_buffer();
};

// Handle to a node in the reverse-mode graph. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var scalar(real v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::int64_t axis) const { return node_->value.dim(axis); }
  std::int64_t numel() const { return node_->value.numel(); }
  real item() const;

  // Seeds d(self)/d(self) = 1 (self must be a scalar) and propagates.
  void backward() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }

 private:
  explicit Var(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;

  friend Var make_op_result(Tensor value, std::vector<Var> inputs, BackwardFn fn);
};

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

// Wraps an op output; records the closure only when some input needs a grad.
Var make_op_result(Tensor value, std::vector<Var> inputs, BackwardFn fn);

inline bool needs_grad(const Node& self, std::size_t i) { return self.inputs[i] && self.inputs[i]->requires_grad; }

}  // namespace fpb
