#include "calf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include "calf/metrics.hpp"
#include "calf/ops.hpp"

namespace calf {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (season == 0) throw ConfigError("season must be at least 1");
  weights.validate();
  sims.validate();
}

template <std::floating_point T>
Batch<T> make_batch(const WindowSet& windows, std::span<const std::size_t> indices, NormMode norm,
                    std::size_t season) {
  if (indices.empty()) throw UsageError("make_batch: no windows selected");
  const std::size_t c = windows.channels();
  const std::size_t t = windows.spec().input_len;
  const std::size_t h = windows.spec().horizon;
  const std::size_t rows = indices.size() * c;

  Batch<T> b;
  b.samples = indices.size();
  b.channels = c;
  std::vector<T> in(rows * t), tg(rows * h);
  b.raw_input.resize(rows * t);
  b.row_mean.assign(rows, 0.0);
  b.row_std.assign(rows, 1.0);
  std::vector<double> win(t * c), fut(h * c);
  for (std::size_t s = 0; s < indices.size(); ++s) {
    windows.input(indices[s], win);
    windows.target(indices[s], fut);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < t; ++i) b.raw_input[(s * c + ch) * t + i] = win[i * c + ch];
    if (norm == NormMode::instance) {
      auto st = instance_normalize(win, c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        b.row_mean[s * c + ch] = st.mean[ch];
        b.row_std[s * c + ch] = st.stddev[ch];
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t r = s * c + ch;
      for (std::size_t i = 0; i < t; ++i) in[r * t + i] = static_cast<T>(win[i * c + ch]);
      for (std::size_t i = 0; i < h; ++i) {
        tg[r * h + i] = static_cast<T>((fut[i * c + ch] - b.row_mean[r]) / b.row_std[r]);
      }
    }
  }
  b.input = Tensor<T>({rows, t}, std::move(in));
  b.target = Tensor<T>({rows, h}, std::move(tg));
  if (season < t) {
    b.mase_scale = seasonal_naive_scales<T>(b.input.data(), t, season);
  } else {
    b.mase_scale.assign(rows, T{1});
  }
  return b;
}

template <std::floating_point T>
std::vector<double> denormalize_rows(const Batch<T>& batch, const Tensor<T>& rows) {
  const std::size_t n = rows.rows();
  const std::size_t h = rows.cols();
  if (n != batch.row_mean.size()) {
    throw DimensionError("denormalize_rows: " + std::to_string(n) + " rows for a batch of " +
                         std::to_string(batch.row_mean.size()));
  }
  auto v = rows.data();
  std::vector<double> out(n * h);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < h; ++i)
      out[r * h + i] = static_cast<double>(v[r * h + i]) * batch.row_std[r] + batch.row_mean[r];
  return out;
}

namespace {

// Affine map of normalized rows back to data units, kept on the tape.
template <std::floating_point T>
Tensor<T> to_data_units(const Tensor<T>& x, const Batch<T>& b) {
  const std::size_t n = x.rows();
  const std::size_t h = x.cols();
  std::vector<T> sd(n * h), mu(n * h);
  for (std::size_t r = 0; r < n; ++r) {
    std::fill_n(sd.begin() + static_cast<std::ptrdiff_t>(r * h), h, static_cast<T>(b.row_std[r]));
    std::fill_n(mu.begin() + static_cast<std::ptrdiff_t>(r * h), h, static_cast<T>(b.row_mean[r]));
  }
  return add(mul(x, Tensor<T>({n, h}, std::move(sd))), Tensor<T>({n, h}, std::move(mu)));
}

template <std::floating_point T>
void require_finite(const std::string& name, const Tensor<T>& t) {
  if (!t.defined()) return;
  if (auto bad = first_non_finite(t)) {
    throw NumericError("non-finite value in " + name + " (element " + std::to_string(*bad) + ")");
  }
}

template <std::floating_point T>
void require_finite_grad(const std::string& name, const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.grad().size(); ++i) {
    if (!std::isfinite(static_cast<double>(t.grad()[i]))) {
      throw NumericError("non-finite gradient in " + name + " (element " + std::to_string(i) + ")");
    }
  }
}

double value_of(const auto& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

}  // namespace

template <std::floating_point T>
LossBreakdown<T> compute_losses(const CalfModel<T>& model, const Batch<T>& batch,
                                const TrainConfig& config) {
  LossBreakdown<T> out;
  out.forward = forward_dual(model, batch.input, batch.channels, config.stop_gradient_textual);
  const auto& fw = out.forward;
  const std::span<const T> scales(batch.mase_scale);

  if (config.sims.sup == LossKind::smape) {
    out.sup = similarity(LossKind::smape, to_data_units(fw.time.output, batch),
                         to_data_units(batch.target, batch));
  } else {
    out.sup = similarity(config.sims.sup, fw.time.output, batch.target, scales);
  }
  if (config.enable_feature) {
    out.feature = feature_reg_loss(std::span<const Tensor<T>>(fw.text.features),
                                   std::span<const Tensor<T>>(fw.time.features), model.projections,
                                   config.weights, config.sims.feature);
  }
  if (config.enable_output) {
    out.output = output_consistency_loss(fw.text.output, fw.time.output, config.sims.output, scales);
  }
  out.total = total_loss(out.sup, out.feature, out.output, config.weights);
  return out;
}

std::string format_step(const StepReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "step=%llu epoch=%zu sup=%.9g feature=%.9g output=%.9g total=%.9g grad_norm=%.9g",
                static_cast<unsigned long long>(r.step), r.epoch, r.sup, r.feature, r.output,
                r.total, r.grad_norm);
  return buf;
}

template <std::floating_point T>
StepReport accumulate_gradients(CalfModel<T>& model, const Batch<T>& batch,
                                const TrainConfig& config) {
  auto named = model.named_trainable();
  for (auto& [name, t] : named) {
    t.clear_grad();
    require_finite(name, t);
  }
  require_finite("batch input", batch.input);
  require_finite("batch target", batch.target);

  auto losses = compute_losses(model, batch, config);
  const auto& fw = losses.forward;
  require_finite("x_time", fw.x_time);
  require_finite("x_text", fw.x_text);
  for (std::size_t l = 0; l < fw.time.features.size(); ++l) {
    require_finite("temporal feature " + std::to_string(l), fw.time.features[l]);
  }
  for (std::size_t l = 0; l < fw.text.features.size(); ++l) {
    require_finite("textual feature " + std::to_string(l), fw.text.features[l]);
  }
  require_finite("temporal output", fw.time.output);
  require_finite("textual output", fw.text.output);
  require_finite("supervised loss", losses.sup);
  require_finite("feature loss", losses.feature);
  require_finite("output loss", losses.output);
  require_finite("total loss", losses.total);

  if (losses.total.on_tape()) backward(losses.total);
  std::vector<Tensor<T>> params;
  for (auto& [name, t] : named) {
    if (!t.has_grad()) t.zero_grad();
    require_finite_grad(name, t);
    params.push_back(t);
  }

  StepReport r;
  r.sup = value_of(losses.sup);
  r.feature = value_of(losses.feature);
  r.output = value_of(losses.output);
  r.total = value_of(losses.total);
  r.grad_norm = grad_norm(std::span<const Tensor<T>>(params));
  return r;
}

template <std::floating_point T>
StepReport train_step(CalfModel<T>& model, const Batch<T>& batch, const TrainConfig& config,
                      Adam<T>& optimizer) {
  auto report = accumulate_gradients(model, batch, config);
  auto params = model.trainable();
  optimizer.step(params);
  report.step = optimizer.steps();
  return report;
}

template <std::floating_point T>
FitReport fit(CalfModel<T>& model, const WindowSet& train, const WindowSet* val,
              const TrainConfig& config, const StepLogger& logger) {
  config.validate();
  if (train.empty()) throw UsageError("fit: empty training split");
  const bool use_val = val && !val->empty();
  const std::vector<std::string> val_metrics{"mse"};

  Adam<T> optimizer(config.adam);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto snapshot = [&] {
    std::vector<std::vector<T>> values;
    for (auto& [name, t] : model.named_trainable()) values.push_back(t.to_vector());
    return values;
  };
  std::vector<std::vector<T>> best = snapshot();

  FitReport report;
  report.train_windows = train.size();
  report.best_val_mse = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = 0;
    double last_sup = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      if (config.max_batches_per_epoch && batches == config.max_batches_per_epoch) break;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      auto batch = make_batch<T>(train, std::span<const std::size_t>(order).subspan(begin, end - begin),
                                 config.norm, config.season);
      auto step = train_step(model, batch, config, optimizer);
      step.epoch = epoch;
      last_sup = step.sup;
      if (logger) logger(step);
      ++batches;
    }
    report.epochs_run = epoch;
    report.last_sup.push_back(last_sup);
    if (!use_val) {
      report.best_epoch = epoch;
      best = snapshot();
      continue;
    }
    const double v = evaluate(model, *val, val_metrics, config.norm).values.at("mse");
    report.val_mse.push_back(v);
    if (v < report.best_val_mse) {
      report.best_val_mse = v;
      report.best_epoch = epoch;
      best = snapshot();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  auto named = model.named_trainable();
  for (std::size_t i = 0; i < named.size(); ++i) {
    std::copy(best[i].begin(), best[i].end(), named[i].second.data().begin());
  }
  report.optimizer_steps = optimizer.steps();
  return report;
}

namespace {

struct MetricAccumulator {
  std::vector<std::string> names;
  std::size_t season = 1;
  std::map<std::string, double> sums;
  std::size_t rows = 0;

  void add_row(std::span<const double> pred, std::span<const double> truth,
               std::span<const double> insample) {
    for (const auto& m : names) {
      double v = 0.0;
      if (m == "mse") v = mse(pred, truth);
      else if (m == "mae") v = mae(pred, truth);
      else if (m == "smape") v = smape(pred, truth);
      else if (m == "mase") v = mase(pred, truth, insample, season);
      sums[m] += v;
    }
    ++rows;
  }

  std::map<std::string, double> result() const {
    std::map<std::string, double> out;
    for (const auto& [m, s] : sums) out[m] = s / static_cast<double>(rows);
    return out;
  }
};

void check_metric_names(std::span<const std::string> metrics) {
  if (metrics.empty()) throw UsageError("evaluate: no metrics requested");
  for (const auto& m : metrics) {
    if (m != "mse" && m != "mae" && m != "smape" && m != "mase") {
      throw UsageError("evaluate: unknown metric '" + m + "' (expected mse, mae, smape or mase)");
    }
  }
}

}  // namespace

template <std::floating_point T>
EvalResult evaluate(const CalfModel<T>& model, const WindowSet& windows,
                    std::span<const std::string> metrics, NormMode norm, std::size_t batch_size,
                    std::size_t season) {
  if (windows.empty()) throw UsageError("evaluate: empty split");
  check_metric_names(metrics);
  if (batch_size == 0) batch_size = 1;
  const std::size_t t = windows.spec().input_len;
  const std::size_t h = windows.spec().horizon;
  const std::size_t c = windows.channels();
  const auto textual_before = model.textual.forward_calls.value();

  MetricAccumulator acc{{metrics.begin(), metrics.end()}, season, {}, 0};
  std::vector<std::size_t> idx;
  std::vector<double> fut(h * c), truth(h);
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    auto batch = make_batch<T>(windows, idx, norm, season);
    auto pred = denormalize_rows(batch, predict(model, batch.input, c));
    for (std::size_t s = 0; s < idx.size(); ++s) {
      windows.target(idx[s], fut);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t r = s * c + ch;
        for (std::size_t i = 0; i < h; ++i) truth[i] = fut[i * c + ch];
        acc.add_row(std::span<const double>(pred).subspan(r * h, h), truth,
                    std::span<const double>(batch.raw_input).subspan(r * t, t));
      }
    }
  }
  EvalResult out;
  out.windows = windows.size();
  out.values = acc.result();
  out.textual_forwards = model.textual.forward_calls.value() - textual_before;
  if (out.textual_forwards != 0) {
    throw std::logic_error("evaluation ran the textual branch");
  }
  return out;
}

EvalResult evaluate_naive(const WindowSet& windows, std::span<const std::string> metrics,
                          std::size_t season) {
  if (windows.empty()) throw UsageError("evaluate: empty split");
  check_metric_names(metrics);
  const std::size_t t = windows.spec().input_len;
  const std::size_t h = windows.spec().horizon;
  const std::size_t c = windows.channels();
  MetricAccumulator acc{{metrics.begin(), metrics.end()}, season, {}, 0};
  std::vector<double> win(t * c), fut(h * c), pred(h), truth(h), insample(t);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    windows.input(w, win);
    windows.target(w, fut);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t; ++i) insample[i] = win[i * c + ch];
      for (std::size_t i = 0; i < h; ++i) {
        pred[i] = win[(t - 1) * c + ch];
        truth[i] = fut[i * c + ch];
      }
      acc.add_row(pred, truth, insample);
    }
  }
  EvalResult out;
  out.windows = windows.size();
  out.values = acc.result();
  return out;
}

#define CALF_INSTANTIATE_TRAINER(T)                                                             \
  template struct Batch<T>;                                                                     \
  template struct LossBreakdown<T>;                                                             \
  template Batch<T> make_batch<T>(const WindowSet&, std::span<const std::size_t>, NormMode,     \
                                  std::size_t);                                                 \
  template std::vector<double> denormalize_rows<T>(const Batch<T>&, const Tensor<T>&);          \
  template LossBreakdown<T> compute_losses<T>(const CalfModel<T>&, const Batch<T>&,             \
                                              const TrainConfig&);                              \
  template StepReport accumulate_gradients<T>(CalfModel<T>&, const Batch<T>&,                   \
                                              const TrainConfig&);                              \
  template StepReport train_step<T>(CalfModel<T>&, const Batch<T>&, const TrainConfig&,         \
                                    Adam<T>&);                                                  \
  template FitReport fit<T>(CalfModel<T>&, const WindowSet&, const WindowSet*,                  \
                            const TrainConfig&, const StepLogger&);                             \
  template EvalResult evaluate<T>(const CalfModel<T>&, const WindowSet&,                        \
                                  std::span<const std::string>, NormMode, std::size_t,          \
                                  std::size_t);

CALF_INSTANTIATE_TRAINER(float)
CALF_INSTANTIATE_TRAINER(double)

#undef CALF_INSTANTIATE_TRAINER

}  // namespace calf
