#include "calf/optim.hpp"

#include <cmath>

namespace calf {

template <std::floating_point T>
void Adam<T>::step(std::span<Tensor<T>> params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), T{0});
      v_.emplace_back(p.numel(), T{0});
    }
  }
  if (m_.size() != params.size()) {
    throw UsageError("Adam::step: parameter list changed size (" + std::to_string(m_.size()) +
                     " -> " + std::to_string(params.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw UsageError("Adam::step: parameter " + std::to_string(i) + " has no grad");
    }
    if (params[i].numel() != m_[i].size()) {
      throw UsageError("Adam::step: parameter " + std::to_string(i) + " changed shape");
    }
  }

  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = options_.learning_rate;
  const double eps = options_.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto g = params[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
    params[i].clear_grad();
  }
}

template <std::floating_point T>
double grad_norm(std::span<const Tensor<T>> params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

template class Adam<float>;
template class Adam<double>;
template double grad_norm<float>(std::span<const Tensor<float>>);
template double grad_norm<double>(std::span<const Tensor<double>>);

}  // namespace calf
