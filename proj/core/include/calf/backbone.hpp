#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "calf/container.hpp"
#include "calf/tensor.hpp"

namespace calf {

/// Shape of a GPT-2-style stack. Zero for width, vocab_size or max_positions
/// means "take it from the weight file" when loading.
struct BackboneConfig {
  std::size_t layers = 6;
  std::size_t width = 768;
  std::size_t heads = 12;
  std::size_t max_positions = 1024;
  std::size_t vocab_size = 50257;
  bool causal_mask = true;
  double ln_eps = 1e-5;

  void validate() const;
};

enum class AttnMatrix { query, key, value, output };

/// Accepts q/k/v/o or query/key/value/output.
AttnMatrix parse_attn_matrix(std::string_view name);
std::string_view to_string(AttnMatrix m) noexcept;

// Tensor naming manifest of the weight container:
//   wte.weight                 [vocab, M]   token embeddings (the dictionary D)
//   wpe.weight                 [max_positions, M]
//   block.{i}.ln_1.gain/bias   [M]
//   block.{i}.attn.{q,k,v,o}_weight [M, M], block.{i}.attn.{q,k,v,o}_bias [M]
//   block.{i}.ln_2.gain/bias   [M]
//   block.{i}.mlp.fc_weight    [M, 4M], block.{i}.mlp.fc_bias [4M]
//   block.{i}.mlp.proj_weight  [4M, M], block.{i}.mlp.proj_bias [M]
//   ln_f.gain/bias             [M]
// Weights are stored input-major, i.e. y = x * W + b.
namespace manifest {
inline constexpr std::string_view token_embedding = "wte.weight";
inline constexpr std::string_view position_embedding = "wpe.weight";
inline constexpr std::string_view final_ln_gain = "ln_f.gain";
inline constexpr std::string_view final_ln_bias = "ln_f.bias";

std::string block_tensor(std::size_t block, std::string_view suffix);
/// Suffixes of one block in container order.
std::span<const std::string_view> block_suffixes();
/// Every name a backbone with `config.layers` blocks must provide.
std::vector<std::string> backbone_names(const BackboneConfig& config);
}  // namespace manifest

template <std::floating_point T>
struct TransformerBlockParams {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> q_weight, q_bias;
  Tensor<T> k_weight, k_bias;
  Tensor<T> v_weight, v_bias;
  Tensor<T> o_weight, o_bias;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> fc_weight, fc_bias;
  Tensor<T> proj_weight, proj_bias;

  const Tensor<T>& weight(AttnMatrix m) const;
  const Tensor<T>& bias(AttnMatrix m) const;
  /// (suffix, tensor) pairs in manifest order.
  std::vector<std::pair<std::string_view, Tensor<T>>> named() const;
  std::vector<std::pair<std::string_view, Tensor<T>*>> named_mut();
};

/// Frozen pretrained stack. Nothing in here ever requires grad.
template <std::floating_point T>
struct Backbone {
  BackboneConfig config;
  Tensor<T> token_embedding;
  Tensor<T> position_embedding;
  std::vector<TransformerBlockParams<T>> blocks;
  Tensor<T> final_ln_gain, final_ln_bias;

  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() const;
  std::size_t parameter_count() const;
};

struct BackboneLoadReport {
  std::vector<std::string> unused;    // present in the file, not consumed
  std::vector<std::string> warnings;  // also forwarded to calf::warn
};

/// GPT-2 style random initialization (N(0, 0.02) weights, residual projections
/// scaled by 1/sqrt(2L), unit layer-norm gains).
template <std::floating_point T>
Backbone<T> random_backbone(const BackboneConfig& config, std::uint64_t seed);

template <std::floating_point T>
Backbone<T> backbone_from_container(const Container& container, const BackboneConfig& config,
                                    BackboneLoadReport* report = nullptr);

template <std::floating_point T>
Backbone<T> load_backbone(const std::filesystem::path& path, const BackboneConfig& config,
                          BackboneLoadReport* report = nullptr);

template <std::floating_point T>
Container to_container(const Backbone<T>& backbone);

template <std::floating_point T>
void save_backbone(const std::filesystem::path& path, const Backbone<T>& backbone);

enum class BranchKind { textual_source, temporal_target };

template <std::floating_point T>
struct LoraAdapter {
  std::size_t block = 0;
  AttnMatrix target = AttnMatrix::query;
  Tensor<T> down;  // A: M x r
  Tensor<T> up;    // B: r x M, zero at creation
  double alpha = 16.0;
  std::size_t rank = 8;

  T scaling() const { return static_cast<T>(alpha / static_cast<double>(rank)); }
};

/// Copyable call counter (atomic so concurrent read-only forwards are safe).
class CallCounter {
 public:
  CallCounter() = default;
  CallCounter(const CallCounter& other) : value_(other.value()) {}
  CallCounter& operator=(const CallCounter& other) {
    value_.store(other.value());
    return *this;
  }
  void increment() const noexcept { value_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t value() const noexcept { return value_.load(std::memory_order_relaxed); }
  void reset() noexcept { value_.store(0); }

 private:
  mutable std::atomic<std::uint64_t> value_{0};
};

template <std::floating_point T>
struct BranchParams {
  BranchKind kind = BranchKind::temporal_target;
  Tensor<T> positional;  // max_positions x M
  std::vector<LoraAdapter<T>> adapters;
  Tensor<T> head_weight;  // M x H
  Tensor<T> head_bias;    // H
  CallCounter forward_calls;

  std::size_t horizon() const { return head_weight.cols(); }
};

/// Copies the backbone's positional table (trainable on the temporal branch,
/// frozen on the textual one) and creates an M -> H head.
template <std::floating_point T>
BranchParams<T> make_branch(const Backbone<T>& backbone, BranchKind kind, std::size_t horizon,
                            std::mt19937_64& rng);

/// Adds one adapter per (block, target) with A ~ N(0, 1/M) and B = 0.
template <std::floating_point T>
void attach_lora(BranchParams<T>& branch, const BackboneConfig& config,
                 std::span<const AttnMatrix> targets, std::size_t rank, double alpha,
                 std::mt19937_64& rng);

template <std::floating_point T>
struct ForwardTrace {
  std::vector<Tensor<T>> features;  // output of each block, rows x M
  Tensor<T> output;                 // rows x H
};

/// Runs `tokens` (rows = batch * channels, M columns) through positional
/// embeddings, every block (with LoRA deltas on the temporal branch) and the
/// branch head. `channels` is the token count per sample; 0 means all rows
/// belong to one sample.
template <std::floating_point T>
ForwardTrace<T> forward_branch(const Backbone<T>& backbone, const BranchParams<T>& branch,
                               const Tensor<T>& tokens, std::size_t channels = 0);

extern template struct TransformerBlockParams<float>;
extern template struct TransformerBlockParams<double>;
extern template struct Backbone<float>;
extern template struct Backbone<double>;

}  // namespace calf
