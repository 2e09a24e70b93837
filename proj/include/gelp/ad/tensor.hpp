#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gelp/core/error.hpp"

namespace gelp::ad {

namespace testing {
/// When set, the tanh backward is scaled by 1.01. Used to check that the
/// finite-difference harness catches a wrong derivative.
inline std::atomic<bool>& corrupt_backward() {
  static std::atomic<bool> flag{false};
  return flag;
}
/// When set, ops stop rejecting NaN/inf results. Lets a NaN marker trace
/// exact data dependencies (receptive-field measurement).
inline std::atomic<bool>& allow_non_finite() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace testing

/// Every tensor is rank 3. Activations use (batch, time, channels); conv
/// kernels (width, in, out); biases (1, 1, channels); scalars (1, 1, 1).
using Shape = std::array<std::size_t, 3>;

inline std::size_t numel(const Shape& s) { return s[0] * s[1] * s[2]; }

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ", " + std::to_string(s[2]) + ")";
}

namespace detail {
inline thread_local bool grad_mode = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Scoped switch for graph recording on the current thread.
class GradMode {
 public:
  explicit GradMode(bool enabled) : previous_(detail::grad_mode) { detail::grad_mode = enabled; }
  ~GradMode() { detail::grad_mode = previous_; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

struct NoGrad : GradMode {
  NoGrad() : GradMode(false) {}
};

template <class T>
class Tensor;

/// Given the op's inputs, its output and the gradient w.r.t. the output,
/// returns one gradient per input (empty where the input needs none). The
/// returned tensors are built from ordinary ops, so they are themselves
/// recorded when higher-order gradients are requested.
template <class T>
using BackwardFn = std::function<std::vector<std::optional<Tensor<T>>>(
    const std::vector<Tensor<T>>& inputs, const Tensor<T>& output, const Tensor<T>& grad_output)>;

namespace detail {

template <class T>
struct Node {
  Shape shape{};
  std::vector<T> data;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor<T>> inputs;
  BackwardFn<T> backward;
};

}  // namespace detail

/// Handle to a node of the dynamic computation graph (the tape). Copies share
/// the node; a tensor produced while recording keeps its inputs alive.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
    node_->shape = shape;
    node_->data.assign(numel(shape), fill);
  }
  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
    require(values.size() == numel(shape),
            "tensor of shape " + to_string(shape) + " given " + std::to_string(values.size()) + " values");
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor({1, 1, 1}, std::vector<T>{v}); }

  /// Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t(shape, std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t dim(std::size_t i) const { return node().shape[i]; }
  std::size_t size() const { return node().data.size(); }
  std::span<const T> data() const { return node().data; }
  const T* raw() const { return node().data.data(); }
  T operator[](std::size_t i) const { return node().data[i]; }
  T at(std::size_t b, std::size_t t, std::size_t c) const {
    const auto& s = node().shape;
    return node().data[(b * s[1] + t) * s[2] + c];
  }
  T item() const {
    require(size() == 1, "item() on a tensor of shape " + to_string(shape()));
    return node().data[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return !node().backward; }
  const char* op() const { return node().op; }

  /// Only leaves may be made trainable or mutated in place.
  Tensor& set_requires_grad(bool flag) {
    require(is_leaf(), "requires_grad can only be changed on a leaf tensor");
    node().requires_grad = flag;
    return *this;
  }
  std::span<T> mutable_data() {
    require(is_leaf(), "only leaf tensors can be modified in place");
    return node().data;
  }

  /// A new leaf holding a copy of the values, outside any graph.
  Tensor detach() const { return Tensor(shape(), node().data); }

  const detail::Node<T>* id() const { return node_.get(); }

 private:
  template <class U>
  friend Tensor<U> make_op_result(Shape, std::vector<U>, std::vector<Tensor<U>>, BackwardFn<U>, const char*);
  template <class U>
  friend class GraphWalker;

  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

  detail::Node<T>& node() const {
    if (!node_) throw InvalidArgument("use of an undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::Node<T>> node_;
};

/// Builds an op output and records it on the graph when grad mode is on and
/// some input requires a gradient. Non-finite outputs are rejected.
template <class T>
Tensor<T> make_op_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs, BackwardFn<T> backward,
                         const char* op) {
  // x * 0 is NaN exactly when x is NaN or infinite.
  if (!testing::allow_non_finite() &&
      std::isnan((Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(data.data(),
                                                                        static_cast<Eigen::Index>(data.size())) *
                  T(0))
                     .sum()))
    throw NonFiniteError(std::string("non-finite value produced by op ") + op);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

}  // namespace gelp::ad
