#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace selfdepth {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_sequence_id() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t sequence = next_sequence_id();
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array with an optional gradient slot. Copies share the
/// underlying storage; operations on tensors that require gradients record
/// themselves so that backward() can replay them in reverse.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(shape_numel(shape), T{0}),
                  requires_grad);
  }
  static Tensor full(const Shape& shape, T fill, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(shape_numel(shape), fill),
                  requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const& { return node_->value; }
  // Copy on temporaries so range-for over f(x).values() stays valid.
  std::vector<T> values() && { return node_->value; }

  T operator[](std::size_t i) const { return node_->value[i]; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor " + shape_str(shape()) +
                       " is not a scalar");
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient after backward(); zeros when no gradient reached this tensor.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(numel(), T{0});
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, no history.
  Tensor detach() const {
    return Tensor(node_->shape, node_->value, false);
  }

  /// Deep copy of values, keeps the requires_grad flag, drops history.
  Tensor clone() const {
    return Tensor(node_->shape, node_->value, node_->requires_grad);
  }

  const NodePtr& node() const { return node_; }

  // Builds an op result; records history only if some input needs grad.
  static Tensor make_result(Shape shape, std::vector<T> values,
                            std::vector<NodePtr> parents,
                            std::function<void(detail::Node<T>&)> backward) {
    Tensor out(std::move(shape), std::move(values), false);
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [](const NodePtr& p) { return p->requires_grad; });
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward);
    }
    return out;
  }

 private:
  NodePtr node_;
};

/// Reverse-mode sweep from a scalar root. Nodes are visited in decreasing
/// creation order, which is a valid reverse topological order because every
/// op's output is created after its inputs.
template <typename T>
void backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     (root.defined() ? shape_str(root.shape())
                                     : std::string("undefined")));
  }
  if (!root.requires_grad()) return;

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::vector<NodeT*> stack{root.node().get()};
  std::unordered_set<const NodeT*> seen{root.node().get()};
  while (!stack.empty()) {
    NodeT* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) {
    return a->sequence > b->sequence;
  });

  root.node()->grad_buffer()[0] += T{1};
  for (NodeT* n : order) {
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
    // Interior grads are not needed once propagated.
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace selfdepth
