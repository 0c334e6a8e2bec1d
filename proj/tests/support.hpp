#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "calf/backbone.hpp"
#include "calf/log.hpp"
#include "calf/model.hpp"
#include "calf/pca.hpp"
#include "calf/tensor.hpp"

namespace calf::testkit {

/// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_sink(previous_); }
  std::vector<std::string> messages;

 private:
  WarningSink previous_;
};

struct TinySpec {
  std::size_t layers = 2;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t vocab = 64;
  std::size_t positions = 16;
  std::size_t input_len = 16;
  std::size_t horizon = 8;
  std::size_t components = 8;
  std::uint64_t seed = 11;
};

inline BackboneConfig tiny_backbone_config(const TinySpec& s) {
  BackboneConfig c;
  c.layers = s.layers;
  c.width = s.width;
  c.heads = s.heads;
  c.vocab_size = s.vocab;
  c.max_positions = s.positions;
  return c;
}

template <std::floating_point T>
CalfModel<T> tiny_model(const TinySpec& s = {}) {
  auto backbone = std::make_shared<const Backbone<T>>(random_backbone<T>(tiny_backbone_config(s), s.seed));
  auto principal = extract_principal_embeddings(backbone->token_embedding, s.components);
  ModelConfig mc;
  mc.backbone = backbone->config;
  mc.input_len = s.input_len;
  mc.horizon = s.horizon;
  return make_model<T>(mc, backbone, principal, s.seed + 1);
}

/// Fills every LoRA up-projection with small random values so adapter paths
/// carry gradient.
template <std::floating_point T>
void randomize_lora(CalfModel<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.05);
  for (auto& a : model.temporal.adapters)
    for (auto& v : a.up.data()) v = static_cast<T>(dist(rng));
}

template <std::floating_point T>
Tensor<T> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor<T>::randn({rows, cols}, rng, static_cast<T>(scale));
}

struct GradCheck {
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t coordinates = 0;
};

/// Below this norm on both sides the gradient is zero up to round-off (e.g. a
/// key bias, which softmax cancels) and the absolute error is reported.
inline constexpr double zero_gradient_norm = 1e-6;

/// Central finite differences on up to `max_coords` random coordinates of
/// `param` (all when 0). The relative error is ||g - g_fd|| / max(||g||, ||g_fd||)
/// over the checked coordinates, or the absolute error when both norms are
/// below zero_gradient_norm.
inline GradCheck check_gradient(Tensor<double> param, const std::function<Tensor<double>()>& loss,
                                double step = 1e-4, std::size_t max_coords = 0,
                                std::uint64_t seed = 5) {
  param.clear_grad();
  auto l = loss();
  backward(l);
  std::vector<double> analytic = param.has_grad()
                                     ? std::vector<double>(param.grad().begin(), param.grad().end())
                                     : std::vector<double>(param.numel(), 0.0);
  param.clear_grad();

  std::vector<std::size_t> coords(param.numel());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (max_coords && coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }

  double diff = 0.0, na = 0.0, nf = 0.0;
  auto data = param.data();
  for (auto i : coords) {
    const double saved = data[i];
    double plus = 0.0, minus = 0.0;
    {
      NoGradGuard guard;
      data[i] = saved + step;
      plus = loss().item();
      data[i] = saved - step;
      minus = loss().item();
    }
    data[i] = saved;
    const double fd = (plus - minus) / (2.0 * step);
    diff += (fd - analytic[i]) * (fd - analytic[i]);
    na += analytic[i] * analytic[i];
    nf += fd * fd;
  }
  GradCheck out;
  out.coordinates = coords.size();
  out.analytic_norm = std::sqrt(na);
  out.numeric_norm = std::sqrt(nf);
  const double denom = std::max(out.analytic_norm, out.numeric_norm);
  out.relative_error = denom < zero_gradient_norm ? std::sqrt(diff) : std::sqrt(diff) / denom;
  return out;
}

}  // namespace calf::testkit
