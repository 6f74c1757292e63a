#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nvpf/core/errors.hpp"

namespace nvpf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

// One vertex of the dynamic computation graph. Leaves hold parameters or
// inputs; interior nodes remember their parents and how to push gradients
// back into them.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Thread-local switch controlling whether operations record graph edges.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major array of doubles. Copies share the underlying node, so a
// Tensor behaves like a handle; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(1, 0.0);
  }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape));
    if (shape_numel(shape) != data.size())
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({}, {v}, requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    auto n = v.size();
    return Tensor({n}, std::move(v), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= rank()) throw ShapeError("axis " + std::to_string(i) + " out of range for " +
                                      shape_string(shape()));
    return node_->shape[i];
  }

  std::span<const double> data() const { return node_->value; }
  // Writable view for leaves (parameters, inputs); interior nodes are immutable.
  std::span<double> mutable_data() {
    if (!node_->is_leaf()) throw Error("mutable_data() on a non-leaf tensor");
    return node_->value;
  }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t i, std::size_t j) const {
    return node_->value.at(i * dim(1) + j);
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw Error("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const {
    if (!has_grad()) throw Error("tensor has no gradient; run backward first");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Same values, cut from the graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }
  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op result. Graph edges are only recorded when gradient mode is
// on and at least one parent participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::initializer_list<Tensor> parents,
                          std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = false;
  if (GradMode::enabled())
    for (const auto& p : parents) track = track || p.requires_grad();
  if (track) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

inline void check_finite(std::span<const double> v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
}

}  // namespace detail

// Topologically ordered record of every differentiable node reachable from a
// root. Parents always precede children; backward() walks it once in reverse.
class Tape {
 public:
  explicit Tape(const Tensor& root) : root_(root) {
    if (!root.requires_grad()) return;
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<detail::Node*>& order() const { return order_; }

  // Seeds d(root)/d(root) = 1 and propagates to every node on the tape.
  // Leaf gradients accumulate across calls; interior ones are reset.
  void backward() {
    if (order_.empty()) return;
    for (auto* n : order_)
      if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    auto* root = order_.back();
    root->ensure_grad();
    for (auto& g : root->grad) g += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      detail::Node* n = *it;
      if (!n->is_leaf()) n->backward_fn(*n);
    }
  }

 private:
  Tensor root_;
  std::vector<detail::Node*> order_;
};

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " + shape_string(loss.shape()));
  Tape(loss).backward();
}

}  // namespace nvpf
