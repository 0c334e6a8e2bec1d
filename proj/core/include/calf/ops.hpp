#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "calf/tensor.hpp"

namespace calf {

/// Similarity / loss kinds. The first three are elementwise; SMAPE and MASE
/// only make sense on forecast-shaped tensors.
enum class LossKind { l1, smooth_l1, mse, smape, mase };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind) noexcept;
bool is_elementwise(LossKind kind) noexcept;

// Elementwise arithmetic on equal shapes.
template <std::floating_point T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> scale(const Tensor<T>& a, T factor);

/// out[i, :] = a[i, :] + b[i mod b.rows, :]. Covers bias rows (b is 1xN or N)
/// and per-position tables tiled over a batch.
template <std::floating_point T> Tensor<T> add_rows(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> transpose(const Tensor<T>& a);

/// x * weight + bias, with bias optional (undefined tensor = no bias).
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

/// Rows [begin, end) of a matrix.
template <std::floating_point T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);

/// Max-subtracted softmax along `axis`. Throws NumericError on non-finite input.
template <std::floating_point T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Normalizes over the last dimension, then applies gain and bias.
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// tanh-approximation GELU (GPT-2 form).
template <std::floating_point T> Tensor<T> gelu(const Tensor<T>& x);

template <std::floating_point T> Tensor<T> sum(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> mean(const Tensor<T>& x);

/// Mean-reduced L1 / SmoothL1 (beta = 1) / MSE. Differentiable in both arguments.
template <std::floating_point T>
Tensor<T> elementwise_loss(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target);

/// 200 * mean(|p - t| / (|p| + |t|)); terms with a zero denominator contribute 0.
template <std::floating_point T>
Tensor<T> smape_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// mean(|p - t| / scale[row]) for a matrix with one scale per row.
template <std::floating_point T>
Tensor<T> mase_loss(const Tensor<T>& pred, const Tensor<T>& target, std::span<const T> row_scale);

/// Grouped multi-head scaled dot-product attention.
///
/// Queries are the rows of `q`; keys/values the rows of `k`/`v`. Query rows
/// are split into consecutive groups of `query_group` rows (0 = one group);
/// group g attends to key rows [g*key_group, (g+1)*key_group), or to every
/// key row when `key_group` is 0 (shared dictionary). Columns are split into
/// `heads` equal slices. `causal` masks key positions after the query position
/// within a group and requires query_group == key_group.
struct AttentionSpec {
  std::size_t heads = 1;
  double scale = 1.0;
  std::size_t query_group = 0;
  std::size_t key_group = 0;
  bool causal = false;
};

/// Returns rows(q) x cols(v). When `probs` is given it receives the attention
/// weights with shape [rows(q), heads, keys_per_query].
template <std::floating_point T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionSpec& spec, Tensor<T>* probs = nullptr);

/// First non-finite element of `t`, if any.
template <std::floating_point T>
std::optional<std::size_t> first_non_finite(const Tensor<T>& t);

}  // namespace calf
