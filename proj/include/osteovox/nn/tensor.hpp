#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace osteovox::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major (last axis fastest) array that records the operations
/// producing it when any input requires gradients.
///
/// Copies share the underlying node; use `clone` for an independent copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Extent of axis i; negative i counts from the back.
  std::size_t dim(int i) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient accumulated by `backward`; zeros when nothing reached this tensor.
  std::span<const T> grad() const { return node_->ensure_grad(); }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Same values, cut off from the graph.
  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }
  Tensor clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  const char* op() const { return node_->op; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// While alive, new operations on this thread do not record a graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// While alive, piecewise-linear ops on this thread (relu, max pooling) fold
/// the branch each element takes into a running fingerprint. Two evaluations
/// with equal fingerprints followed the same linear piece. Traces nest; only
/// the innermost one records.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t fingerprint() const { return hash_; }

  static bool active();
  /// Folds `token` into the innermost active trace, if any.
  static void record(std::uint64_t token);

 private:
  std::uint64_t hash_ = 0x9e3779b97f4a7c15ULL;
  BranchTrace* previous_;
};

/// Builds an op result. The graph edge and `backward` are kept only when
/// gradients are enabled and some parent requires them.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward, const char* op);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls
/// (a second call on the same graph doubles them); interior gradients are
/// reset first. Throws DomainError if `loss` is not a scalar.
template <class T>
void backward(const Tensor<T>& loss);

// ---------------------------------------------------------------------------

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace osteovox::nn
