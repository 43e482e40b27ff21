#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "palm/errors.hpp"

namespace palm {

// Reverse-mode tape node. Ops allocate the output node, record parents and a
// closure that scatters the output gradient into the parents' buffers.
template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> values;
  std::vector<T> grad;  // allocated (zeroed) iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;
};

inline size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor shape has non-positive dim " + std::to_string(d));
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

template <typename T>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

  explicit Tensor(std::vector<int> shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
    size_t n = shape_numel(shape);
    node_->shape = std::move(shape);
    node_->values.assign(n, fill);
  }

  Tensor(std::vector<int> shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
    if (shape_numel(shape) != values.size())
      throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->values = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  size_t numel() const { return node_->values.size(); }

  std::vector<T>& values() { return node_->values; }
  const std::vector<T>& values() const { return node_->values; }

  std::vector<T>& grad() {
    if (!node_->requires_grad) throw ParameterError("grad() on tensor without requires_grad");
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    if (!node_->requires_grad) throw ParameterError("grad() on tensor without requires_grad");
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    if (b)
      node_->grad.assign(numel(), T(0));
    else
      node_->grad.clear();
    return *this;
  }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
  }

  // Runs the tape from this scalar. Gradients accumulate into every
  // requires_grad node reachable from it; unreachable nodes keep zeros.
  void backward() {
    if (numel() != 1) throw DimensionError("backward() requires a scalar loss");
    if (!node_->requires_grad) throw ParameterError("backward() on a graph with no gradient path");

    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        TensorNode<T>* p = n->parents[next++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

// Assembles an op output: requires_grad is inherited from any parent, and the
// closure is only attached when a gradient can actually flow.
template <typename T>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> values, const std::vector<Tensor<T>>& parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  if (rg) {
    out.set_requires_grad(true);
    auto node = out.node();
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace detail

}  // namespace palm
