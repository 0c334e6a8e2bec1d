#include "calf/match.hpp"

#include <cmath>

#include "calf/ops.hpp"

namespace calf {

CrossScale parse_cross_scale(std::string_view name) {
  if (name == "sqrt_channels") return CrossScale::sqrt_channels;
  if (name == "sqrt_head_dim") return CrossScale::sqrt_head_dim;
  throw UsageError("unknown cross-attention scale '" + std::string(name) +
                   "' (expected sqrt_channels or sqrt_head_dim)");
}

std::string_view to_string(CrossScale s) noexcept {
  return s == CrossScale::sqrt_channels ? "sqrt_channels" : "sqrt_head_dim";
}

void MatchConfig::validate() const {
  if (input_len == 0) throw ConfigError("input length must be at least 1");
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ConfigError("match width " + std::to_string(width) + " must be a positive multiple of " +
                      std::to_string(heads) + " heads");
  }
}

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> MatchParams<T>::named() const {
  return {
      {"embed.weight", embed_weight},        {"embed.bias", embed_bias},
      {"mhsa.ln.gain", mhsa_ln_gain},        {"mhsa.ln.bias", mhsa_ln_bias},
      {"mhsa.q_weight", mhsa_q_weight},      {"mhsa.q_bias", mhsa_q_bias},
      {"mhsa.k_weight", mhsa_k_weight},      {"mhsa.k_bias", mhsa_k_bias},
      {"mhsa.v_weight", mhsa_v_weight},      {"mhsa.v_bias", mhsa_v_bias},
      {"mhsa.o_weight", mhsa_o_weight},      {"mhsa.o_bias", mhsa_o_bias},
      {"cross.q_weight", cross_q_weight},    {"cross.k_weight", cross_k_weight},
      {"cross.v_weight", cross_v_weight},
  };
}

template <std::floating_point T>
MatchParams<T> init_match_params(const MatchConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t m = config.width;
  const std::size_t t = config.input_len;
  const T embed_bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(t)));
  const T xavier = static_cast<T>(std::sqrt(3.0 / static_cast<double>(m)));
  auto square = [&] { return Tensor<T>::uniform({m, m}, rng, -xavier, xavier); };

  MatchParams<T> p;
  p.embed_weight = Tensor<T>::uniform({t, m}, rng, -embed_bound, embed_bound);
  p.embed_bias = Tensor<T>::uniform({m}, rng, -embed_bound, embed_bound);
  p.mhsa_ln_gain = Tensor<T>({m}, T{1});
  p.mhsa_ln_bias = Tensor<T>::zeros({m});
  p.mhsa_q_weight = square();
  p.mhsa_k_weight = square();
  p.mhsa_v_weight = square();
  p.mhsa_o_weight = square();
  p.mhsa_q_bias = Tensor<T>::zeros({m});
  p.mhsa_k_bias = Tensor<T>::zeros({m});
  p.mhsa_v_bias = Tensor<T>::zeros({m});
  p.mhsa_o_bias = Tensor<T>::zeros({m});
  p.cross_q_weight = square();
  p.cross_k_weight = square();
  p.cross_v_weight = square();
  for (auto& [name, tensor] : p.named()) tensor.set_requires_grad(true);
  return p;
}

template <std::floating_point T>
Tensor<T> embed_series(const Tensor<T>& series, const MatchParams<T>& params) {
  if (series.rank() != 2 || series.cols() != params.embed_weight.rows()) {
    throw DimensionError("embed_series: expected rows x " +
                         std::to_string(params.embed_weight.rows()) + " channel histories, got " +
                         shape_string(series.shape()));
  }
  return linear(series, params.embed_weight, params.embed_bias);
}

template <std::floating_point T>
Tensor<T> embed_window(const Tensor<T>& window, const MatchParams<T>& params) {
  if (window.rank() != 2 || window.rows() != params.embed_weight.rows()) {
    throw DimensionError("embed_window: expected a " + std::to_string(params.embed_weight.rows()) +
                         " x C window, got " + shape_string(window.shape()));
  }
  return embed_series(transpose(window), params);
}

namespace {

std::size_t group_size(std::size_t rows, std::size_t channels) {
  const std::size_t c = channels == 0 ? rows : channels;
  if (c == 0 || rows % c != 0) {
    throw DimensionError(std::to_string(rows) + " token rows are not a multiple of " +
                         std::to_string(c) + " channels");
  }
  return c;
}

template <std::floating_point T>
void require_width(const char* op, const Tensor<T>& x, std::size_t width) {
  if (x.rank() != 2 || x.cols() != width) {
    throw DimensionError(std::string(op) + ": expected width " + std::to_string(width) + ", got " +
                         shape_string(x.shape()));
  }
}

double cross_scale_factor(const MatchConfig& config, std::size_t channels) {
  if (config.cross_scale == CrossScale::sqrt_channels) {
    return 1.0 / std::sqrt(static_cast<double>(channels));
  }
  return 1.0 / std::sqrt(static_cast<double>(config.width / config.heads));
}

// Mean over heads of [rows, heads, keys] attention weights.
template <std::floating_point T>
Tensor<T> average_heads(const Tensor<T>& probs) {
  const std::size_t rows = probs.dim(0);
  const std::size_t heads = probs.dim(1);
  const std::size_t keys = probs.dim(2);
  auto p = probs.data();
  std::vector<T> out(rows * keys, T{0});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t k = 0; k < keys; ++k) out[r * keys + k] += p[(r * heads + h) * keys + k];
  for (auto& v : out) v /= static_cast<T>(heads);
  return Tensor<T>({rows, keys}, std::move(out));
}

}  // namespace

template <std::floating_point T>
Tensor<T> mhsa(const Tensor<T>& tokens, const MatchParams<T>& params, const MatchConfig& config,
               std::size_t channels, Tensor<T>* probs) {
  require_width("mhsa", tokens, config.width);
  const std::size_t c = group_size(tokens.rows(), channels);
  auto h = layer_norm(tokens, params.mhsa_ln_gain, params.mhsa_ln_bias, static_cast<T>(config.ln_eps));
  auto q = linear(h, params.mhsa_q_weight, params.mhsa_q_bias);
  auto k = linear(h, params.mhsa_k_weight, params.mhsa_k_bias);
  auto v = linear(h, params.mhsa_v_weight, params.mhsa_v_bias);
  AttentionSpec spec;
  spec.heads = config.heads;
  spec.scale = 1.0 / std::sqrt(static_cast<double>(config.width / config.heads));
  spec.query_group = c;
  spec.key_group = c;
  auto a = attention(q, k, v, spec, probs);
  return add(tokens, linear(a, params.mhsa_o_weight, params.mhsa_o_bias));
}

template <std::floating_point T>
Tensor<T> cross_modal_match(const Tensor<T>& x_time, const Tensor<T>& principal,
                            const MatchParams<T>& params, const MatchConfig& config,
                            std::size_t channels, Tensor<T>* probs) {
  require_width("cross_modal_match", x_time, config.width);
  require_width("cross_modal_match (principal)", principal, config.width);
  const std::size_t c = group_size(x_time.rows(), channels);
  auto q = matmul(x_time, params.cross_q_weight);
  auto k = matmul(principal, params.cross_k_weight);
  auto v = matmul(principal, params.cross_v_weight);
  AttentionSpec spec;
  spec.heads = config.heads;
  spec.scale = cross_scale_factor(config, c);
  spec.query_group = c;
  spec.key_group = 0;
  return attention(q, k, v, spec, probs);
}

template <std::floating_point T>
Tensor<T> word_relevance(const Tensor<T>& x_time, const Tensor<T>& keys,
                         const MatchParams<T>& params, const MatchConfig& config,
                         std::size_t channels) {
  require_width("word_relevance", x_time, config.width);
  require_width("word_relevance (words)", keys, config.width);
  if (keys.rows() == 0) throw UsageError("word_relevance: empty word selection");
  NoGradGuard no_grad;
  const std::size_t c = group_size(x_time.rows(), channels);
  auto q = matmul(x_time, params.cross_q_weight);
  auto k = matmul(keys, params.cross_k_weight);
  AttentionSpec spec;
  spec.heads = config.heads;
  spec.scale = cross_scale_factor(config, c);
  spec.query_group = c;
  spec.key_group = 0;
  Tensor<T> probs;
  attention(q, k, k, spec, &probs);
  return average_heads(probs);
}

template struct MatchParams<float>;
template struct MatchParams<double>;

#define CALF_INSTANTIATE_MATCH(T)                                                               \
  template MatchParams<T> init_match_params<T>(const MatchConfig&, std::mt19937_64&);           \
  template Tensor<T> embed_series<T>(const Tensor<T>&, const MatchParams<T>&);                  \
  template Tensor<T> embed_window<T>(const Tensor<T>&, const MatchParams<T>&);                  \
  template Tensor<T> mhsa<T>(const Tensor<T>&, const MatchParams<T>&, const MatchConfig&,       \
                             std::size_t, Tensor<T>*);                                          \
  template Tensor<T> cross_modal_match<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                          const MatchParams<T>&, const MatchConfig&,            \
                                          std::size_t, Tensor<T>*);                             \
  template Tensor<T> word_relevance<T>(const Tensor<T>&, const Tensor<T>&,                      \
                                       const MatchParams<T>&, const MatchConfig&, std::size_t);

CALF_INSTANTIATE_MATCH(float)
CALF_INSTANTIATE_MATCH(double)

#undef CALF_INSTANTIATE_MATCH

}  // namespace calf
