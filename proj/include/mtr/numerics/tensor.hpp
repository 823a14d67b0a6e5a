#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtr/errors.hpp"

namespace mtr {

using Shape = std::vector<std::size_t>;

inline std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
concept Real = std::is_same_v<T, float> || std::is_same_v<T, double>;

// Verification precision. Arithmetic that is merely IEEE-special in the
// 32-bit training path is an error here.
template <class T>
inline constexpr bool kStrictArithmetic = std::is_same_v<T, double>;

template <Real T>
class Tensor;

namespace detail {

template <Real T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  // Only populated for interior nodes that take part in differentiation.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const T>)> backward;

  std::span<T> mutable_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major array with an optional reverse-mode tape node. Copies are
// shallow: two Tensor handles may refer to the same node, which is how model
// parameters are shared between forward passes and the optimizer.
template <Real T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (NumElements(shape) != values.size()) {
      throw DimensionError("tensor of shape " + ShapeString(shape) +
                           " cannot hold " + std::to_string(values.size()) +
                           " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = NumElements(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const std::size_t n = NumElements(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{v}, requires_grad);
  }
  static Tensor parameter(Shape shape, std::vector<T> values) {
    return Tensor(std::move(shape), std::move(values), true);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  T value(std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (numel() != 1)
      throw UsageError("item() on tensor of shape " + ShapeString(shape()));
    return node_->value[0];
  }

  // Direct write access. Intended for parameter updates and finite-difference
  // probes; never use it on a tensor that is part of a live tape. Like
  // shared_ptr, constness of the handle does not extend to the node.
  std::span<T> mutable_values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  // Zeros if no gradient has reached this tensor.
  std::span<const T> grad() const { return node_->mutable_grad(); }
  std::span<T> mutable_grad() const { return node_->mutable_grad(); }
  void zero_grad() const { node_->grad.assign(node_->value.size(), T(0)); }

  // New leaf holding a copy of the values, cut from any tape.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }
  Tensor clone_parameter() const { return Tensor(shape(), node_->value, true); }

  const void* id() const { return node_.get(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {
inline thread_local bool grad_disabled = false;
}  // namespace detail

// While alive, ops on this thread record no tape (inference only).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <Real T>
bool AnyRequiresGrad(std::initializer_list<const Tensor<T>*> inputs) {
  if (grad_disabled) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Builds the output of a differentiable op. `backward` receives the output
// gradient and accumulates into the inputs it captured; it is dropped
// entirely when no input needs a gradient.
template <Real T, class Backward>
Tensor<T> MakeResult(Shape shape, std::vector<T> value,
                     std::initializer_list<const Tensor<T>*> inputs,
                     Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  if (AnyRequiresGrad<T>(inputs)) {
    node->requires_grad = true;
    for (const auto* t : inputs)
      if (t->requires_grad()) node->parents.push_back(t->node());
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

// Reverse sweep from a scalar loss. Gradients accumulate into every tensor
// with requires_grad reachable from the loss; interior tape nodes are
// released afterwards so the next step starts from a clean tape.
template <Real T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " +
                     ShapeString(loss.shape()));
  }
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw DivergenceError("non-finite loss");
  }
  if (!loss.requires_grad()) return;

  using Node = detail::Node<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->mutable_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(n->grad);
  }
  for (Node* n : order) {
    if (!n->leaf) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

template <Real T>
bool AllFinite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace mtr
