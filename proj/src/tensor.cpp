#include "nfs/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "nfs/error.hpp"

namespace nfs {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

static TensorImplPtr make_impl(Shape shape, std::vector<double> values,
                               bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor shape " + shape_str(shape) +
                       " has a non-positive dimension");
    }
  }
  auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw ShapeError("tensor value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->grad.assign(static_cast<std::size_t>(n), 0.0);
  impl->requires_grad = requires_grad;
  return impl;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape),
                          std::vector<double>(static_cast<std::size_t>(n), 0.0),
                          requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape),
                          std::vector<double>(static_cast<std::size_t>(n), value),
                          requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  return Tensor(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_impl({1}, {value}, requires_grad));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a scalar tensor, got shape " +
                     shape_str(shape()));
  }
  return impl_->values[0];
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<TensorImplPtr> parents,
               std::function<void(TensorImpl&)> backward_fn) {
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  auto impl = make_impl(std::move(shape), std::move(values), needs_grad);
  if (needs_grad) {
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(impl);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  if (!loss.has_tape()) {
    throw Error("backward: loss is detached from the tape");
  }

  // Iterative post-order DFS; the reversed order is topological.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl().get(), 0});
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      TensorImpl* parent = top.node->parents[top.next_parent++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  loss.impl()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op_name) + ": shape mismatch, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace nfs
