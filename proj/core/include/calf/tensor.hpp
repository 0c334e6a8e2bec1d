#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calf/error.hpp"

namespace calf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <std::floating_point T>
class Tensor;

namespace detail {

template <std::floating_point T>
struct TensorImpl;

// One recorded operation. `backward` reads the output's grad and accumulates
// into the grads of `inputs`.
template <std::floating_point T>
struct Node {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <std::floating_point T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

}  // namespace detail

/// Thread-local switch for graph recording. While disabled, operations never
/// create tape nodes even if their inputs require grad.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor. Copies share storage (a handle, like most autodiff
/// front ends); clone() gives an independent leaf.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }

  template <class Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T{1}) {
    Tensor out(std::move(shape));
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& x : out.impl_->data) x = static_cast<T>(dist(rng));
    return out;
  }

  template <class Rng>
  static Tensor uniform(Shape shape, Rng& rng, T low, T high) {
    Tensor out(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(low),
                                                static_cast<double>(high));
    for (auto& x : out.impl_->data) x = static_cast<T>(dist(rng));
    return out;
  }

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return checked().data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> data() { return checked().data; }
  std::span<const T> data() const { return checked().data; }
  std::vector<T> to_vector() const { return checked().data; }

  bool has_grad() const { return !checked().grad.empty(); }
  std::span<T> grad() { return checked().grad; }
  std::span<const T> grad() const { return checked().grad; }
  void zero_grad() { checked().grad.assign(numel(), T{0}); }
  void clear_grad() { checked().grad.clear(); }

  T item() const;
  T operator()(std::size_t row, std::size_t col) const;
  T& operator()(std::size_t row, std::size_t col);

  bool requires_grad() const { return checked().requires_grad; }
  /// Only leaves may toggle the flag; recorded results inherit it from their inputs.
  Tensor& set_requires_grad(bool flag);
  bool on_tape() const { return static_cast<bool>(checked().node); }

  /// Same values, no grad, no tape.
  Tensor detach() const;
  /// Independent copy of the values as a fresh leaf (requires_grad=false).
  Tensor clone() const;

  template <std::floating_point U>
  Tensor<U> cast() const {
    const auto& src = checked().data;
    std::vector<U> values(src.begin(), src.end());
    return Tensor<U>(shape(), std::move(values));
  }

  bool shares_storage_with(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  const std::shared_ptr<Impl>& impl() const noexcept { return impl_; }
  static Tensor from_impl(std::shared_ptr<Impl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  Impl& checked() const;

  std::shared_ptr<Impl> impl_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively into
/// every reachable tensor that requires grad; each node runs exactly once.
template <std::floating_point T>
void backward(const Tensor<T>& loss);

/// Number of distinct recorded operations reachable from `root`, in the order
/// backward() would visit them. Exposed for tests of the tape invariants.
template <std::floating_point T>
std::vector<const detail::TensorImpl<T>*> tape_order(const Tensor<T>& root);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace calf
