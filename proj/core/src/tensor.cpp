#include "calf/tensor.hpp"

#include <unordered_set>

namespace calf {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {
thread_local bool grad_mode = true;
}  // namespace

bool grad_enabled() noexcept { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(calf::numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  if (calf::numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " needs " +
                         std::to_string(calf::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <std::floating_point T>
typename Tensor<T>::Impl& Tensor<T>::checked() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}

template <std::floating_point T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(s));
  }
  return s[axis];
}

template <std::floating_point T>
std::size_t Tensor<T>::rows() const {
  if (rank() != 2) throw DimensionError("rows() needs a matrix, got " + shape_string(shape()));
  return shape()[0];
}

template <std::floating_point T>
std::size_t Tensor<T>::cols() const {
  if (rank() != 2) throw DimensionError("cols() needs a matrix, got " + shape_string(shape()));
  return shape()[1];
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on a tensor of shape " + shape_string(shape()));
  }
  return checked().data[0];
}

template <std::floating_point T>
T Tensor<T>::operator()(std::size_t row, std::size_t col) const {
  return checked().data[row * cols() + col];
}

template <std::floating_point T>
T& Tensor<T>::operator()(std::size_t row, std::size_t col) {
  return checked().data[row * cols() + col];
}

template <std::floating_point T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  auto& impl = checked();
  if (impl.node) throw UsageError("requires_grad can only be set on leaf tensors");
  impl.requires_grad = flag;
  if (!flag) impl.grad.clear();
  return *this;
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), checked().data);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), checked().data);
}

template <std::floating_point T>
std::vector<const detail::TensorImpl<T>*> tape_order(const Tensor<T>& root) {
  using Impl = detail::TensorImpl<T>;
  std::vector<const Impl*> order;
  if (!root.defined() || !root.impl()->node) return order;

  // Iterative post-order DFS; inputs are pushed before their consumer.
  std::unordered_set<const Impl*> visited;
  struct Frame {
    const Impl* impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.impl().get(), 0});
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& frame = stack.back();
    const auto& node = frame.impl->node;
    if (node && frame.next_input < node->inputs.size()) {
      const Impl* child = node->inputs[frame.next_input++].get();
      if (child->node && visited.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(frame.impl);
    stack.pop_back();
  }
  return order;
}

template <std::floating_point T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.impl()->node) {
    throw UsageError("backward() on a tensor that is not on the tape");
  }
  auto order = tape_order(loss);
  auto& root = *loss.impl();
  root.ensure_grad();
  root.grad[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto* impl = *it;
    if (impl->grad.empty()) continue;
    impl->node->backward(*impl);
  }
}

template class Tensor<float>;
template class Tensor<double>;

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template std::vector<const detail::TensorImpl<float>*> tape_order(const Tensor<float>&);
template std::vector<const detail::TensorImpl<double>*> tape_order(const Tensor<double>&);

}  // namespace calf
