#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calf/tensor.hpp"

namespace calf {

struct AdamOptions {
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are bound to parameters by position, so
/// callers must pass the same parameter list (same order) on every step.
template <std::floating_point T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Applies one update in place and clears the grads. Every parameter must
  /// carry a grad buffer.
  void step(std::span<Tensor<T>> params);

  std::uint64_t steps() const noexcept { return step_; }
  const AdamOptions& options() const noexcept { return options_; }
  const std::vector<std::vector<T>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<T>>& second_moments() const noexcept { return v_; }

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

/// Global L2 norm of the grads of `params` (missing grads count as zero).
template <std::floating_point T>
double grad_norm(std::span<const Tensor<T>> params);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace calf
