#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "calf/data.hpp"
#include "calf/losses.hpp"
#include "calf/model.hpp"
#include "calf/optim.hpp"

namespace calf {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t patience = 3;  // epochs without validation-MSE improvement
  std::uint64_t seed = 2024;
  bool shuffle = true;
  std::size_t max_batches_per_epoch = 0;  // 0 = every batch
  bool enable_feature = true;
  bool enable_output = true;
  bool stop_gradient_textual = false;
  std::size_t season = 1;  // seasonal-naive lag for MASE scales
  NormMode norm = NormMode::instance;
  LossWeights weights;
  SimSpec sims;
  AdamOptions adam;

  void validate() const;
};

/// A set of windows laid out for the model: one row per (sample, channel).
template <std::floating_point T>
struct Batch {
  std::size_t samples = 0;
  std::size_t channels = 0;
  Tensor<T> input;   // (B*C) x T, normalized
  Tensor<T> target;  // (B*C) x H, normalized with the input statistics
  std::vector<double> row_mean;
  std::vector<double> row_std;
  std::vector<T> mase_scale;  // seasonal-naive scale of each normalized input row
  std::vector<double> raw_input;  // (B*C) x T before normalization
};

template <std::floating_point T>
Batch<T> make_batch(const WindowSet& windows, std::span<const std::size_t> indices, NormMode norm,
                    std::size_t season);

/// Maps normalized rows back to data units using the batch statistics.
template <std::floating_point T>
std::vector<double> denormalize_rows(const Batch<T>& batch, const Tensor<T>& rows);

template <std::floating_point T>
struct LossBreakdown {
  DualForward<T> forward;
  Tensor<T> sup;
  Tensor<T> feature;  // undefined when disabled
  Tensor<T> output;   // undefined when disabled
  Tensor<T> total;
};

/// Forward through both branches and assembles sup + l1 * feature + l2 * output.
template <std::floating_point T>
LossBreakdown<T> compute_losses(const CalfModel<T>& model, const Batch<T>& batch,
                                const TrainConfig& config);

struct StepReport {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double sup = 0.0;
  double feature = 0.0;
  double output = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

/// "step=<n> epoch=<e> sup=<v> feature=<v> output=<v> total=<v> grad_norm=<v>"
std::string format_step(const StepReport& report);

/// compute_losses + backward. Every trainable tensor ends with a grad buffer
/// (zeros when it is not reached). Throws NumericError naming the first
/// non-finite tensor.
template <std::floating_point T>
StepReport accumulate_gradients(CalfModel<T>& model, const Batch<T>& batch,
                                const TrainConfig& config);

/// accumulate_gradients followed by an Adam update of the trainable tensors.
template <std::floating_point T>
StepReport train_step(CalfModel<T>& model, const Batch<T>& batch, const TrainConfig& config,
                      Adam<T>& optimizer);

using StepLogger = std::function<void(const StepReport&)>;

struct FitReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  std::uint64_t optimizer_steps = 0;
  std::size_t train_windows = 0;
  std::vector<double> val_mse;
  std::vector<double> last_sup;  // last step's sup loss per epoch
};

/// Mini-batch training with early stopping on validation MSE; the best
/// epoch's weights are restored at the end.
template <std::floating_point T>
FitReport fit(CalfModel<T>& model, const WindowSet& train, const WindowSet* val,
              const TrainConfig& config, const StepLogger& logger = {});

struct EvalResult {
  std::size_t windows = 0;
  std::map<std::string, double> values;
  std::uint64_t textual_forwards = 0;  // during this evaluation; always 0
};

/// Temporal-branch forecasts over every window (no drop-last), metrics on
/// de-normalized values. Supported metrics: mse, mae, smape, mase.
template <std::floating_point T>
EvalResult evaluate(const CalfModel<T>& model, const WindowSet& windows,
                    std::span<const std::string> metrics, NormMode norm = NormMode::instance,
                    std::size_t batch_size = 256, std::size_t season = 1);

/// Repeat-last-value forecast scored with the same metrics.
EvalResult evaluate_naive(const WindowSet& windows, std::span<const std::string> metrics,
                          std::size_t season = 1);

}  // namespace calf
