#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mvad {

using Shape = std::vector<std::int64_t>;

// Shape / dtype misuse (mismatched operands, bad indices, malformed graphs).
class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN / inf surfaced by an op, with the op named in the message.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) {
    if (d <= 0) throw TensorError("shape dims must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

// One value in the compute graph: a buffer, an optional grad buffer of the same
// shape, and (for op outputs) the parents plus a closure that pushes this node's
// grad into theirs.
template <typename Scalar>
struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::string op;  // empty for leaves
  std::uint64_t id = detail::next_node_id();
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool backward_ran = false;  // set on the root once backward has consumed the graph
};

// Value-semantics handle onto a shared graph node. Copies alias the same buffer.
template <typename Scalar>
class Tensor {
 public:
  using Ptr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;

  // Zero-filled tensor.
  explicit Tensor(Shape shape) {
    std::int64_t n = shape_numel(shape);
    node_ = std::make_shared<Node<Scalar>>();
    node_->shape = std::move(shape);
    node_->data.assign(static_cast<std::size_t>(n), Scalar(0));
    set_requires_grad_internal(false);
  }

  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false) {
    std::int64_t n = shape_numel(shape);
    if (static_cast<std::int64_t>(data.size()) != n)
      throw TensorError("tensor data size " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    node_ = std::make_shared<Node<Scalar>>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    check_finite("tensor literal");
    set_requires_grad_internal(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t(std::move(shape));
    t.set_requires_grad_internal(requires_grad);
    return t;
  }

  static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
    Tensor t(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    t.set_requires_grad_internal(requires_grad);
    return t;
  }

  static Tensor scalar(Scalar value) { return Tensor({1}, std::vector<Scalar>{value}); }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const {
    if (i >= node_->shape.size())
      throw TensorError("dim index " + std::to_string(i) + " out of rank " +
                        std::to_string(node_->shape.size()));
    return node_->shape[i];
  }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::vector<Scalar>& data() { return node_->data; }
  const std::vector<Scalar>& data() const { return node_->data; }
  std::vector<Scalar>& grad() {
    if (!node_->requires_grad) throw TensorError("tensor has no grad buffer (requires_grad=false)");
    return node_->grad;
  }
  const std::vector<Scalar>& grad() const {
    if (!node_->requires_grad) throw TensorError("tensor has no grad buffer (requires_grad=false)");
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
  }

  // Row-major element access for tests and feature packing.
  Scalar at(std::initializer_list<std::int64_t> idx) const {
    return node_->data[flat_index(idx)];
  }
  Scalar& at(std::initializer_list<std::int64_t> idx) { return node_->data[flat_index(idx)]; }

  const std::string& op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }
  Ptr node() const { return node_; }

  void check_finite(const std::string& op_name) const {
    for (Scalar v : node_->data) {
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(op_name + ": non-finite value in output of shape " +
                           shape_str(node_->shape));
    }
  }

  // Used by op implementations to attach provenance to a freshly built output.
  void attach(std::string op_name, std::vector<Tensor> inputs,
              std::function<void(Node<Scalar>&)> backward_fn) {
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    node_->op = std::move(op_name);
    if (needs) {
      set_requires_grad_internal(true);
      node_->parents.reserve(inputs.size());
      for (Tensor& t : inputs) node_->parents.push_back(t.node_);
      node_->backward_fn = std::move(backward_fn);
    }
  }

 private:
  std::size_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != node_->shape.size())
      throw TensorError("index rank " + std::to_string(idx.size()) +
                        " does not match tensor rank " + std::to_string(node_->shape.size()));
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (std::int64_t i : idx) {
      std::int64_t d = node_->shape[k];
      if (i < 0 || i >= d)
        throw TensorError("index " + std::to_string(i) + " out of bounds for dim " +
                          std::to_string(k) + " of " + shape_str(node_->shape));
      flat = flat * d + i;
      ++k;
    }
    return static_cast<std::size_t>(flat);
  }

  void set_requires_grad_internal(bool rg) {
    node_->requires_grad = rg;
    if (rg && node_->grad.size() != node_->data.size())
      node_->grad.assign(node_->data.size(), Scalar(0));
  }

  Ptr node_;
};

// Reverse topological view over the graph reachable from one root, with an op
// listing for inspection. Backward visits each node exactly once.
template <typename Scalar>
class ComputeGraph {
 public:
  struct Entry {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
  };

  static ComputeGraph trace(const Tensor<Scalar>& root) {
    if (!root.valid()) throw TensorError("trace: empty tensor handle");
    ComputeGraph g;
    g.root_ = root.node();
    // Iterative post-order DFS: children appear after all their parents.
    std::unordered_set<const Node<Scalar>*> visited;
    std::vector<std::pair<std::shared_ptr<Node<Scalar>>, std::size_t>> stack;
    stack.emplace_back(g.root_, 0);
    visited.insert(g.root_.get());
    while (!stack.empty()) {
      auto& [node, next_parent] = stack.back();
      if (next_parent < node->parents.size()) {
        auto parent = node->parents[next_parent++];
        if (visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
      } else {
        g.order_.push_back(node);
        stack.pop_back();
      }
    }
    for (const auto& node : g.order_) {
      if (node->parents.empty()) continue;  // leaves and non-differentiable outputs
      Entry e;
      e.op = node->op;
      e.output = node->id;
      for (const auto& p : node->parents) e.inputs.push_back(p->id);
      g.entries_.push_back(std::move(e));
    }
    return g;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t node_count() const { return order_.size(); }

  // Seeds d(root)/d(root) = 1 and pushes grads to the leaves. Grads accumulate
  // into whatever the leaf buffers already hold (callers zero_grad beforehand).
  void run_backward() {
    if (root_->data.size() != 1)
      throw TensorError("backward: root must be a scalar, got shape " + shape_str(root_->shape));
    if (!root_->requires_grad)
      throw TensorError("backward: root does not require grad; nothing to differentiate");
    if (root_->backward_ran)
      throw TensorError("backward: already ran on this graph; call reset() to run again");
    root_->backward_ran = true;
    root_->grad[0] += Scalar(1);
    // order_ is post-order (parents first); walk in reverse, root first.
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<Scalar>& n = **it;
      if (n.backward_fn) n.backward_fn(n);
    }
  }

  // Clears interior grads so a rerun pushes exactly one more copy of the
  // gradient into the leaves; leaf grads are left to keep accumulating.
  void reset() {
    root_->backward_ran = false;
    for (auto& n : order_)
      if (!n->parents.empty() && n->requires_grad)
        std::fill(n->grad.begin(), n->grad.end(), Scalar(0));
  }

 private:
  std::shared_ptr<Node<Scalar>> root_;
  std::vector<std::shared_ptr<Node<Scalar>>> order_;
  std::vector<Entry> entries_;
};

// Convenience: trace from the loss and run one backward pass.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  auto g = ComputeGraph<Scalar>::trace(loss);
  g.run_backward();
}

}  // namespace mvad
