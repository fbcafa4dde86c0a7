#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "segan/tensor.hpp"

namespace segan {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool needs_grad() const { return graph->needs_grad(*this); }
};

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order because an op can only consume nodes that already exist.
///
/// Leaves come in three flavours:
///   constant() owns a copy of its value and never receives gradients;
///   frozen()   references an external tensor without tracking gradients;
///   param()    references an external tensor and, after backward(), adds the
///              gradient into that tensor's grad buffer (if it requires grad).
/// Referenced tensors must outlive the graph and stay unmodified while it is used.
template <typename T>
class Graph {
 public:
  /// Receives the gradient of the node's output; pushes into inputs via grad_of().
  using BackwardFn = std::function<void(Graph&, std::span<const T> out_grad)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> frozen(const Tensor<T>& value);
  Var<T> param(Tensor<T>& value);

  /// Appends an op node. needs_grad is inherited from the inputs; when no input
  /// needs a gradient the backward function is dropped.
  Var<T> record(Tensor<T> out, std::vector<Var<T>> inputs, BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const;
  bool needs_grad(Var<T> v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient accumulator of a node, allocated zeroed on first use. Returns an
  /// empty span for nodes that do not need gradients.
  std::span<T> grad_of(Var<T> v);

  /// Gradient buffer after backward(); empty if the node received none.
  std::span<const T> grad(Var<T> v) const { return nodes_.at(v.id).grad; }

  /// Reverse-mode sweep from a scalar node. Each node is visited at most once,
  /// in reverse creation order; fan-out contributions add up.
  void backward(Var<T> loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reject non-finite op outputs. Defaults to on in debug builds.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T>* sink = nullptr;
    std::vector<std::size_t> inputs;
    std::vector<T> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;  // stable references across push_back
  bool check_finite_;
};

// Structural ops of the tensor core. All of them are differentiable.

/// Elementwise product. b may have one channel and be broadcast over a's channels.
template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b);

/// Elementwise sum of equal shapes.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// a * factor.
template <typename T>
Var<T> scale(Var<T> a, T factor);

/// Concatenation of 4-D tensors along the channel axis, in list order.
template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);

/// Channels [first, first + count) of a 4-D tensor.
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t first, std::size_t count);

/// (1/numel) * sum |a - b|. Subgradient 0 where a == b.
template <typename T>
Var<T> mean_abs(Var<T> a, Var<T> b);

/// Arithmetic mean of scalar nodes.
template <typename T>
Var<T> mean_of(std::span<const Var<T>> scalars);

/// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum_all(Var<T> a);

/// Sum of element-wise products with a constant weight tensor, as a scalar.
template <typename T>
Var<T> dot_const(Var<T> a, const Tensor<T>& weights);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  return concat_channels(std::span<const Var<T>>(parts));
}

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& scalars) {
  return mean_of(std::span<const Var<T>>(scalars));
}

}  // namespace segan
