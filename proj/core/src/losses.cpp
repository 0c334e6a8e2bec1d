#include "calf/losses.hpp"

#include <cmath>

#include "calf/log.hpp"

namespace calf {

void LossWeights::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

std::vector<double> layer_weights(std::size_t layers, double gamma) {
  std::vector<double> w(layers);
  for (std::size_t l = 1; l <= layers; ++l) {
    w[l - 1] = std::pow(gamma, static_cast<double>(layers - l));
  }
  return w;
}

void SimSpec::validate() const {
  if (!is_elementwise(feature)) {
    throw ConfigError("feature similarity must be l1, smooth_l1 or mse, got " +
                      std::string(to_string(feature)));
  }
}

SimSpec SimSpec::for_family(std::string_view family) {
  if (family == "ett") return {LossKind::l1, LossKind::l1, LossKind::l1};
  if (family == "m4") return {LossKind::smape, LossKind::smooth_l1, LossKind::mase};
  return {LossKind::smooth_l1, LossKind::smooth_l1, LossKind::smooth_l1};
}

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> ProjectionStack<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::size_t l = 0; l < layers(); ++l) {
    out.emplace_back("proj." + std::to_string(l) + ".text", text[l]);
    out.emplace_back("proj." + std::to_string(l) + ".time", time[l]);
  }
  return out;
}

template <std::floating_point T>
ProjectionStack<T> make_projection_stack(std::size_t layers, std::size_t width,
                                         std::mt19937_64& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(width)));
  ProjectionStack<T> p;
  for (std::size_t l = 0; l < layers; ++l) {
    p.text.push_back(Tensor<T>::uniform({width, width}, rng, -bound, bound));
    p.time.push_back(Tensor<T>::uniform({width, width}, rng, -bound, bound));
    p.text.back().set_requires_grad(true);
    p.time.back().set_requires_grad(true);
  }
  return p;
}

template <std::floating_point T>
ProjectionStack<T> identity_projection_stack(std::size_t layers, std::size_t width) {
  ProjectionStack<T> p;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor<T> eye({width, width});
    for (std::size_t i = 0; i < width; ++i) eye(i, i) = T{1};
    p.text.push_back(eye);
    p.time.push_back(eye.clone());
  }
  return p;
}

template <std::floating_point T>
Tensor<T> similarity(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target,
                     std::span<const T> row_scale) {
  if (is_elementwise(kind)) return elementwise_loss(kind, pred, target);
  if (kind == LossKind::smape) return smape_loss(pred, target);
  std::vector<T> scales(row_scale.begin(), row_scale.end());
  std::size_t clamped = 0;
  for (auto& s : scales) {
    if (!(s >= static_cast<T>(mase_scale_floor))) {
      s = static_cast<T>(mase_scale_floor);
      ++clamped;
    }
  }
  if (clamped > 0) {
    warn("MASE scale below " + std::to_string(mase_scale_floor) + " on " +
         std::to_string(clamped) + " row(s); clamped");
  }
  return mase_loss(pred, target, std::span<const T>(scales));
}

template <std::floating_point T>
Tensor<T> feature_reg_loss(std::span<const Tensor<T>> text_features,
                           std::span<const Tensor<T>> time_features,
                           const ProjectionStack<T>& projections, const LossWeights& weights,
                           LossKind kind) {
  const std::size_t layers = text_features.size();
  if (layers == 0 || time_features.size() != layers || projections.layers() != layers) {
    throw UsageError("feature_reg_loss: layer counts differ (text " + std::to_string(layers) +
                     ", time " + std::to_string(time_features.size()) + ", projections " +
                     std::to_string(projections.layers()) + ")");
  }
  if (!is_elementwise(kind)) {
    throw UsageError("feature_reg_loss: " + std::string(to_string(kind)) +
                     " is not an elementwise similarity");
  }
  const auto w = layer_weights(layers, weights.gamma);
  Tensor<T> total;
  for (std::size_t l = 0; l < layers; ++l) {
    auto a = matmul(text_features[l], projections.text[l]);
    auto b = matmul(time_features[l], projections.time[l]);
    auto term = scale(elementwise_loss(kind, a, b), static_cast<T>(w[l]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <std::floating_point T>
Tensor<T> output_consistency_loss(const Tensor<T>& y_text, const Tensor<T>& y_time, LossKind kind,
                                  std::span<const T> row_scale) {
  return similarity(kind, y_text, y_time, row_scale);
}

template <std::floating_point T>
Tensor<T> total_loss(const Tensor<T>& sup, const Tensor<T>& feature, const Tensor<T>& output,
                     const LossWeights& weights) {
  if (!sup.defined() || sup.numel() != 1) throw UsageError("total_loss: supervised term must be a scalar");
  Tensor<T> total = sup;
  if (feature.defined() && weights.lambda1 != 0.0) {
    total = add(total, scale(feature, static_cast<T>(weights.lambda1)));
  }
  if (output.defined() && weights.lambda2 != 0.0) {
    total = add(total, scale(output, static_cast<T>(weights.lambda2)));
  }
  return total;
}

template <std::floating_point T>
std::vector<T> seasonal_naive_scales(std::span<const T> rows, std::size_t len, std::size_t season) {
  if (len == 0 || rows.size() % len != 0) {
    throw DimensionError("seasonal_naive_scales: " + std::to_string(rows.size()) +
                         " values are not rows of length " + std::to_string(len));
  }
  if (season == 0 || season >= len) {
    throw UsageError("seasonal_naive_scales: season " + std::to_string(season) +
                     " needs a window longer than itself (length " + std::to_string(len) + ")");
  }
  const std::size_t n = rows.size() / len;
  std::vector<T> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = rows.data() + r * len;
    double acc = 0.0;
    for (std::size_t t = season; t < len; ++t) acc += std::abs(static_cast<double>(x[t] - x[t - season]));
    out[r] = static_cast<T>(acc / static_cast<double>(len - season));
  }
  return out;
}

template struct ProjectionStack<float>;
template struct ProjectionStack<double>;

#define CALF_INSTANTIATE_LOSSES(T)                                                              \
  template ProjectionStack<T> make_projection_stack<T>(std::size_t, std::size_t,                \
                                                       std::mt19937_64&);                       \
  template ProjectionStack<T> identity_projection_stack<T>(std::size_t, std::size_t);           \
  template Tensor<T> similarity<T>(LossKind, const Tensor<T>&, const Tensor<T>&,                \
                                   std::span<const T>);                                         \
  template Tensor<T> feature_reg_loss<T>(std::span<const Tensor<T>>, std::span<const Tensor<T>>, \
                                         const ProjectionStack<T>&, const LossWeights&,         \
                                         LossKind);                                             \
  template Tensor<T> output_consistency_loss<T>(const Tensor<T>&, const Tensor<T>&, LossKind,   \
                                                std::span<const T>);                            \
  template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                   const LossWeights&);                                         \
  template std::vector<T> seasonal_naive_scales<T>(std::span<const T>, std::size_t, std::size_t);

CALF_INSTANTIATE_LOSSES(float)
CALF_INSTANTIATE_LOSSES(double)

#undef CALF_INSTANTIATE_LOSSES

}  // namespace calf
