#pragma once

// Dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto shared storage. Ops record a GraphNode on
// their output whenever at least one input requires a gradient; backward()
// walks the recorded graph in reverse topological order. Leaf tensors keep
// accumulating gradients across backward() calls until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rcagan/errors.hpp"

namespace rcagan {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorImpl;

template <typename T>
struct GraphNode {
  std::string_view op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads the output's data/grad and whatever it captured at forward time,
  // accumulates into the inputs' grads.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<GraphNode<T>> node;

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->data.assign(numel(shape), fill);
    impl_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (values.size() != numel(shape)) {
      throw DimensionError("Tensor", "size", numel(shape), values.size());
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  T item() const {
    if (size() != 1) throw DimensionError("item", "size", 1, size());
    return impl_->data[0];
  }

  // NCHW element access.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return impl_->data[offset(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return impl_->data[offset(n, c, h, w)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !impl_->node; }

  // New leaf holding a copy of the values, cut off from the graph.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const auto& s = impl_->shape;
    return ((n * s[1] + c) * s[2] + h) * s[3] + w;
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

// Wraps freshly computed values as an op output. The graph node is attached
// only if grad mode is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!detail::grad_mode()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<GraphNode<T>>();
  node->op = op;
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward_fn);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

// Populates grads of every leaf reachable from `loss` that requires a
// gradient. Interior gradients are recomputed from scratch on every call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw DimensionError("backward", "size", 1, loss.size());
  using Impl = TensorImpl<T>;
  const auto& root = loss.impl();

  std::vector<Impl*> order;  // post-order: inputs before consumers
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      Impl* child = impl->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (Impl* impl : order) {
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* impl = *it;
    if (impl->node) impl->node->backward(*impl);
  }
}

}  // namespace rcagan
