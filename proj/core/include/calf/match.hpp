#pragma once

#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "calf/tensor.hpp"

namespace calf {

/// Temperature of the text-token cross-attention: 1/sqrt(C) (channel count,
/// the default) or the usual 1/sqrt(M / heads).
enum class CrossScale { sqrt_channels, sqrt_head_dim };

CrossScale parse_cross_scale(std::string_view name);
std::string_view to_string(CrossScale s) noexcept;

struct MatchConfig {
  std::size_t input_len = 96;  // T
  std::size_t width = 768;     // M
  std::size_t heads = 12;
  CrossScale cross_scale = CrossScale::sqrt_channels;
  double ln_eps = 1e-5;

  void validate() const;
};

/// Trainable weights of the series embedding, the token self-attention and the
/// cross-attention against the principal word embeddings.
template <std::floating_point T>
struct MatchParams {
  Tensor<T> embed_weight;  // T x M, shared across channels
  Tensor<T> embed_bias;    // M
  Tensor<T> mhsa_ln_gain, mhsa_ln_bias;
  Tensor<T> mhsa_q_weight, mhsa_q_bias;
  Tensor<T> mhsa_k_weight, mhsa_k_bias;
  Tensor<T> mhsa_v_weight, mhsa_v_bias;
  Tensor<T> mhsa_o_weight, mhsa_o_bias;
  Tensor<T> cross_q_weight;  // W_q
  Tensor<T> cross_k_weight;  // W_k
  Tensor<T> cross_v_weight;  // W_v

  std::vector<std::pair<std::string, Tensor<T>>> named() const;
};

template <std::floating_point T>
MatchParams<T> init_match_params(const MatchConfig& config, std::mt19937_64& rng);

/// Maps each channel's length-T history (one row of `series`, rows x T) to an
/// M-dimensional token with one shared linear layer.
template <std::floating_point T>
Tensor<T> embed_series(const Tensor<T>& series, const MatchParams<T>& params);

/// Same as embed_series for a single T x C window.
template <std::floating_point T>
Tensor<T> embed_window(const Tensor<T>& window, const MatchParams<T>& params);

/// Pre-norm multi-head self-attention over the channel tokens of each sample
/// (full, non-causal) with a residual connection. Produces X_time.
template <std::floating_point T>
Tensor<T> mhsa(const Tensor<T>& tokens, const MatchParams<T>& params, const MatchConfig& config,
               std::size_t channels = 0, Tensor<T>* probs = nullptr);

/// Cross-attention with the time tokens as queries and the principal word
/// embeddings as keys and values: softmax(Q K^T * scale) V with
/// Q = X_time W_q, K = D_hat W_k, V = D_hat W_v. Produces X_text.
template <std::floating_point T>
Tensor<T> cross_modal_match(const Tensor<T>& x_time, const Tensor<T>& principal,
                            const MatchParams<T>& params, const MatchConfig& config,
                            std::size_t channels = 0, Tensor<T>* probs = nullptr);

/// Head-averaged attention weights of every time token over `keys`
/// (rows x keys.rows), using the trained W_q / W_k. Forward only.
template <std::floating_point T>
Tensor<T> word_relevance(const Tensor<T>& x_time, const Tensor<T>& keys,
                         const MatchParams<T>& params, const MatchConfig& config,
                         std::size_t channels = 0);

}  // namespace calf
