#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace nfs {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// One tape node. Leaves have no parents and no backward_fn; op outputs
// carry the closure that scatters their grad into the parents' grads.
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values, zero-initialized
  bool requires_grad = false;
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;
};

// Value-semantics handle to a shared tape node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }
  std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  std::vector<double>& grad() { return impl_->grad; }
  const std::vector<double>& grad() const { return impl_->grad; }

  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_tape() const {
    return impl_->backward_fn != nullptr || !impl_->parents.empty();
  }

  void zero_grad();

  TensorImplPtr impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Builds an op output node. requires_grad is inherited from the parents.
Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<TensorImplPtr> parents,
               std::function<void(TensorImpl&)> backward_fn);

// Reverse-mode sweep from a scalar loss. Visits each reachable node once,
// in reverse topological order; grads accumulate across repeated calls.
void backward(const Tensor& loss);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op_name);

}  // namespace nfs
