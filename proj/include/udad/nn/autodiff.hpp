#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "udad/nn/tensor.hpp"

namespace udad::nn {

/// One value in the computation graph. `backward` reads `grad` and
/// accumulates into the gradients of `inputs`.
template <class T>
struct node {
  basic_tensor<T> value;
  basic_tensor<T> grad;
  std::vector<std::shared_ptr<node>> inputs;
  std::function<void(node&)> backward;
  bool requires_grad = false;
  std::string label;

  basic_tensor<T>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = basic_tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording on this thread for its lifetime.
class no_grad_guard {
 public:
  no_grad_guard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~no_grad_guard() { detail::grad_enabled = previous_; }
  no_grad_guard(const no_grad_guard&) = delete;
  no_grad_guard& operator=(const no_grad_guard&) = delete;

 private:
  bool previous_;
};

/// Handle to a graph node. Copies share the node.
template <class T>
class basic_var {
 public:
  basic_var() = default;
  explicit basic_var(std::shared_ptr<node<T>> n) : node_(std::move(n)) {}

  static basic_var constant(basic_tensor<T> value) {
    auto n = std::make_shared<node<T>>();
    n->value = std::move(value);
    return basic_var(std::move(n));
  }

  static basic_var parameter(basic_tensor<T> value, std::string label) {
    auto n = std::make_shared<node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->label = std::move(label);
    return basic_var(std::move(n));
  }

  bool valid() const { return static_cast<bool>(node_); }
  const basic_tensor<T>& value() const { return node_->value; }
  basic_tensor<T>& mutable_value() { return node_->value; }
  const basic_tensor<T>& grad() const { return node_->grad; }
  const shape_t& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& label() const { return node_->label; }
  void zero_grad() { node_->grad = basic_tensor<T>(); }

  /// Same value, cut from the graph.
  basic_var detach() const { return constant(node_->value); }

  const std::shared_ptr<node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<node<T>> node_;
};

using var = basic_var<float>;

/// Wraps an op result. Records the inputs and backward closure only when
/// recording is enabled and some input needs a gradient. Non-finite
/// results raise poison_error naming the op.
template <class T>
basic_var<T> make_result(const char* op, basic_tensor<T> value, std::vector<basic_var<T>> inputs,
                         std::function<void(node<T>&)> backward) {
  for (const T& v : value.values())
    if (!std::isfinite(static_cast<double>(v))) throw poison_error(std::string(op) + ": produced a non-finite value");
  auto n = std::make_shared<node<T>>();
  n->value = std::move(value);
  n->label = op;
  if (detail::grad_enabled) {
    for (const auto& in : inputs)
      if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return basic_var<T>(std::move(n));
}

/// Reverse sweep from a scalar root. Gradients accumulate into every
/// reachable node that requires one.
template <class T>
void backward(const basic_var<T>& root) {
  if (root.value().size() != 1) throw shape_error("backward: root must be a scalar, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<node<T>*> order;
  std::unordered_set<node<T>*> seen;
  std::vector<std::pair<node<T>*, std::size_t>> stack{{root.ptr().get(), 0}};
  seen.insert(root.ptr().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.ptr()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace udad::nn
