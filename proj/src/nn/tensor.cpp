#include "osteovox/nn/tensor.hpp"

#include <unordered_set>

#include "osteovox/errors.hpp"

namespace osteovox::nn {

namespace {
thread_local bool g_grad_enabled = true;
thread_local BranchTrace* g_trace = nullptr;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

BranchTrace::BranchTrace() : previous_(g_trace) { g_trace = this; }
BranchTrace::~BranchTrace() { g_trace = previous_; }
bool BranchTrace::active() { return g_trace != nullptr; }

void BranchTrace::record(std::uint64_t token) {
  if (!g_trace) return;
  std::uint64_t z = g_trace->hash_ ^ (token + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  g_trace->hash_ = z ^ (z >> 31);
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad)
    : Tensor(shape, std::vector<T>(nn::numel(shape), fill), requires_grad) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (values.size() != nn::numel(shape)) {
    throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                     std::to_string(nn::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <class T>
std::size_t Tensor<T>::dim(int i) const {
  const int r = static_cast<int>(rank());
  const int k = i < 0 ? r + i : i;
  if (k < 0 || k >= r) {
    throw ShapeError("axis " + std::to_string(i) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(k)];
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
  return node_->value[0];
}

template <class T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward, const char* op) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1 || loss.rank() != 0) {
    throw DomainError("backward needs a scalar loss");
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  Node<T>* root = loss.node().get();
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<float>, std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(Node<float>&)>, const char*);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(Node<double>&)>, const char*);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace osteovox::nn
