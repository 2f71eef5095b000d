#pragma once

// Minimal reverse-mode automatic differentiation over dense tensors, with the
// handful of volumetric operators the velocity UNet needs.

#include <deque>
#include <functional>
#include <vector>

#include "tfm/tensor.hpp"

namespace tfm::nn {

template <class T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(std::size_t axis) const { return value().dim(axis); }
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  /// With tracking disabled no backward closures are recorded (inference).
  explicit Graph(bool tracking = true) : tracking_(tracking) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const noexcept { return tracking_; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), tracking_, {}); }

  const Tensor<T>& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad(int id) {
    auto& node = nodes_.at(static_cast<std::size_t>(id));
    if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
      node.grad = Tensor<T>(node.value.shape());
    }
    return node.grad;
  }
  bool has_grad(int id) const {
    const auto& node = nodes_.at(static_cast<std::size_t>(id));
    return !node.grad.empty();
  }

  /// Records an op result. `backward` runs only when some input requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    bool needs = false;
    if (tracking_) {
      for (const auto& in : inputs) needs = needs || requires_grad(in.id);
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  /// Seeds d(scalar)/d(scalar) = 1 and propagates to every leaf.
  void backward(Var<T> scalar);

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool tracking_;
  std::deque<Node> nodes_;
};

// Layouts: volumes are [B, C, D, H, W]; vectors are [B, F].

/// Same-padded 3D convolution; kernel size (1 or 3) is read from w [Co, Ci, k, k, k].
template <class T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b);

template <class T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, double eps = 1e-5);

template <class T>
Var<T> silu(Var<T> x);

/// y = x W^T + b with x [N, F], w [O, F], b [O].
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

template <class T>
Var<T> add(Var<T> a, Var<T> b);

/// h [B, C, ...] + e [B, C] broadcast over the trailing axes.
template <class T>
Var<T> add_channel_bias(Var<T> h, Var<T> e);

template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <class T>
Var<T> avg_pool2(Var<T> x);

template <class T>
Var<T> upsample_nearest2(Var<T> x);

/// Softmax attention with queries q [B, C, N] over keys/values k, v [B, M, C]; returns [B, C, N].
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v);

/// e [B, E] -> [B, E, D, H, W].
template <class T>
Var<T> broadcast_spatial(Var<T> e, std::int64_t depth, std::int64_t height, std::int64_t width);

template <class T>
Var<T> reshape(Var<T> x, Shape shape);

/// Average over axis 1: [B, C, ...] -> [B, 1, ...].
template <class T>
Var<T> channel_mean(Var<T> x);

/// Mean of squared differences against a constant target; returns a scalar (shape {}).
template <class T>
Var<T> mse_loss(Var<T> prediction, const Tensor<T>& target);

}  // namespace tfm::nn
