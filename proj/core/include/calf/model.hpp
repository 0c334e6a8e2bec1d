#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "calf/backbone.hpp"
#include "calf/container.hpp"
#include "calf/losses.hpp"
#include "calf/match.hpp"
#include "calf/pca.hpp"

namespace calf {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t input_len = 96;
  std::size_t horizon = 96;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  std::vector<AttnMatrix> lora_targets{AttnMatrix::query, AttnMatrix::value};
  CrossScale cross_scale = CrossScale::sqrt_channels;

  MatchConfig match_config() const;
};

/// Both branches over one shared frozen backbone, the match module and the
/// feature projections.
template <std::floating_point T>
struct CalfModel {
  ModelConfig config;
  std::shared_ptr<const Backbone<T>> backbone;
  PrincipalEmbeddings<T> principal;
  MatchParams<T> match;
  BranchParams<T> textual;
  BranchParams<T> temporal;
  ProjectionStack<T> projections;

  /// Every trainable tensor under a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> named_trainable() const;
  std::vector<Tensor<T>> trainable() const;
  std::size_t trainable_count() const;
  /// Backbone blocks and embeddings plus the textual positional copy.
  std::size_t frozen_count() const;
};

template <std::floating_point T>
CalfModel<T> make_model(const ModelConfig& config, std::shared_ptr<const Backbone<T>> backbone,
                        PrincipalEmbeddings<T> principal, std::uint64_t seed);

template <std::floating_point T>
struct DualForward {
  Tensor<T> x_time;
  Tensor<T> x_text;
  ForwardTrace<T> time;
  ForwardTrace<T> text;
};

/// `series` holds one length-T history per row, samples stacked channel-major
/// ((B*C) x T); `channels` is C.
template <std::floating_point T>
ForwardTrace<T> forward_temporal(const CalfModel<T>& model, const Tensor<T>& series,
                                 std::size_t channels, Tensor<T>* x_time = nullptr);

/// Temporal and textual branches. With `stop_gradient_textual` the match and
/// textual forwards are not recorded.
template <std::floating_point T>
DualForward<T> forward_dual(const CalfModel<T>& model, const Tensor<T>& series,
                            std::size_t channels, bool stop_gradient_textual = false);

/// Temporal-branch forecast without recording, (B*C) x H.
template <std::floating_point T>
Tensor<T> predict(const CalfModel<T>& model, const Tensor<T>& series, std::size_t channels);

/// Trainable tensors only; the backbone and principal files are referenced
/// from the run configuration.
template <std::floating_point T>
Container checkpoint_container(const CalfModel<T>& model);

/// Copies checkpoint values into the model. Missing, unexpected or mis-shaped
/// tensors raise a ConfigError listing all of them.
template <std::floating_point T>
void restore_checkpoint(CalfModel<T>& model, const Container& container);

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const CalfModel<T>& model);

template <std::floating_point T>
void load_checkpoint(CalfModel<T>& model, const std::filesystem::path& path);

}  // namespace calf
