#pragma once

#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "calf/ops.hpp"
#include "calf/tensor.hpp"

namespace calf {

struct LossWeights {
  double gamma = 0.8;
  double lambda1 = 1.0;   // feature regularization
  double lambda2 = 0.01;  // output consistency

  void validate() const;
};

/// gamma^(L-l) for l = 1..L; the deepest layer always gets 1.
std::vector<double> layer_weights(std::size_t layers, double gamma);

struct SimSpec {
  LossKind sup = LossKind::l1;
  LossKind feature = LossKind::l1;
  LossKind output = LossKind::l1;

  void validate() const;
  /// Per-family defaults: "ett" -> L1 everywhere, "m4" -> SMAPE / SmoothL1 /
  /// MASE, anything else -> SmoothL1 everywhere.
  static SimSpec for_family(std::string_view family);
};

/// phi_l^text and phi_l^time for every layer: bias-free M x M maps.
template <std::floating_point T>
struct ProjectionStack {
  std::vector<Tensor<T>> text;
  std::vector<Tensor<T>> time;

  std::size_t layers() const { return text.size(); }
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
};

template <std::floating_point T>
ProjectionStack<T> make_projection_stack(std::size_t layers, std::size_t width, std::mt19937_64& rng);

/// Identity maps (frozen), for tests and hand-checkable algebra.
template <std::floating_point T>
ProjectionStack<T> identity_projection_stack(std::size_t layers, std::size_t width);

/// Smallest seasonal-naive scale accepted by the MASE loss before clamping.
inline constexpr double mase_scale_floor = 1e-6;

/// sim(pred, target) for any loss kind. MASE needs one in-sample scale per row;
/// scales below mase_scale_floor are clamped with a warning.
template <std::floating_point T>
Tensor<T> similarity(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target,
                     std::span<const T> row_scale = {});

/// sum_l gamma^(L-l) * sim(phi_text_l(F_text^l), phi_time_l(F_time^l)).
template <std::floating_point T>
Tensor<T> feature_reg_loss(std::span<const Tensor<T>> text_features,
                           std::span<const Tensor<T>> time_features,
                           const ProjectionStack<T>& projections, const LossWeights& weights,
                           LossKind kind);

template <std::floating_point T>
Tensor<T> output_consistency_loss(const Tensor<T>& y_text, const Tensor<T>& y_time, LossKind kind,
                                  std::span<const T> row_scale = {});

/// sup + lambda1 * feature + lambda2 * output. An undefined term (disabled)
/// contributes exactly zero.
template <std::floating_point T>
Tensor<T> total_loss(const Tensor<T>& sup, const Tensor<T>& feature, const Tensor<T>& output,
                     const LossWeights& weights);

/// Mean |x_t - x_{t-m}| of each row of a rows x len matrix (row-major).
template <std::floating_point T>
std::vector<T> seasonal_naive_scales(std::span<const T> rows, std::size_t len, std::size_t season);

}  // namespace calf
