#include "calf/model.hpp"

#include <algorithm>
#include <random>

#include "calf/ops.hpp"

namespace calf {

MatchConfig ModelConfig::match_config() const {
  MatchConfig m;
  m.input_len = input_len;
  m.width = backbone.width;
  m.heads = backbone.heads;
  m.cross_scale = cross_scale;
  m.ln_eps = backbone.ln_eps;
  return m;
}

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> CalfModel<T>::named_trainable() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (auto& [name, t] : match.named()) out.emplace_back("match." + name, t);
  out.emplace_back("temporal.positional", temporal.positional);
  for (const auto& a : temporal.adapters) {
    const std::string prefix =
        "temporal.lora." + std::to_string(a.block) + "." + std::string(to_string(a.target));
    out.emplace_back(prefix + ".down", a.down);
    out.emplace_back(prefix + ".up", a.up);
  }
  out.emplace_back("temporal.head.weight", temporal.head_weight);
  out.emplace_back("temporal.head.bias", temporal.head_bias);
  out.emplace_back("textual.head.weight", textual.head_weight);
  out.emplace_back("textual.head.bias", textual.head_bias);
  for (auto& [name, t] : projections.named()) out.emplace_back(name, t);
  return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> CalfModel<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_trainable()) out.push_back(t);
  return out;
}

template <std::floating_point T>
std::size_t CalfModel<T>::trainable_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_trainable()) n += t.numel();
  return n;
}

template <std::floating_point T>
std::size_t CalfModel<T>::frozen_count() const {
  return backbone->parameter_count() + textual.positional.numel();
}

template <std::floating_point T>
CalfModel<T> make_model(const ModelConfig& config, std::shared_ptr<const Backbone<T>> backbone,
                        PrincipalEmbeddings<T> principal, std::uint64_t seed) {
  if (!backbone) throw UsageError("make_model: no backbone");
  if (principal.width() != backbone->config.width) {
    throw ConfigError("principal embeddings have width " + std::to_string(principal.width()) +
                      " but the backbone has width " + std::to_string(backbone->config.width));
  }
  CalfModel<T> model;
  model.config = config;
  model.config.backbone = backbone->config;
  model.backbone = std::move(backbone);
  model.principal = std::move(principal);
  const auto& bcfg = model.backbone->config;

  std::mt19937_64 rng(seed);
  model.match = init_match_params<T>(model.config.match_config(), rng);
  model.textual = make_branch(*model.backbone, BranchKind::textual_source, config.horizon, rng);
  model.temporal = make_branch(*model.backbone, BranchKind::temporal_target, config.horizon, rng);
  if (!config.lora_targets.empty()) {
    attach_lora(model.temporal, bcfg, std::span<const AttnMatrix>(config.lora_targets),
                config.lora_rank, config.lora_alpha, rng);
  }
  model.projections = make_projection_stack<T>(bcfg.layers, bcfg.width, rng);
  return model;
}

template <std::floating_point T>
ForwardTrace<T> forward_temporal(const CalfModel<T>& model, const Tensor<T>& series,
                                 std::size_t channels, Tensor<T>* x_time) {
  const auto mc = model.config.match_config();
  auto tokens = embed_series(series, model.match);
  auto xt = mhsa(tokens, model.match, mc, channels);
  if (x_time) *x_time = xt;
  return forward_branch(*model.backbone, model.temporal, xt, channels);
}

template <std::floating_point T>
DualForward<T> forward_dual(const CalfModel<T>& model, const Tensor<T>& series,
                            std::size_t channels, bool stop_gradient_textual) {
  DualForward<T> out;
  out.time = forward_temporal(model, series, channels, &out.x_time);
  const auto mc = model.config.match_config();
  auto textual = [&] {
    out.x_text = cross_modal_match(out.x_time, model.principal.components, model.match, mc, channels);
    out.text = forward_branch(*model.backbone, model.textual, out.x_text, channels);
  };
  if (stop_gradient_textual) {
    NoGradGuard guard;
    textual();
  } else {
    textual();
  }
  return out;
}

template <std::floating_point T>
Tensor<T> predict(const CalfModel<T>& model, const Tensor<T>& series, std::size_t channels) {
  NoGradGuard guard;
  return forward_temporal(model, series, channels).output;
}

template <std::floating_point T>
Container checkpoint_container(const CalfModel<T>& model) {
  Container c;
  for (auto& [name, t] : model.named_trainable()) c.add(name, t);
  return c;
}

template <std::floating_point T>
void restore_checkpoint(CalfModel<T>& model, const Container& container) {
  auto named = model.named_trainable();
  std::vector<std::string> problems;
  for (auto& [name, t] : named) {
    const auto* rec = container.find(name);
    if (!rec) {
      problems.push_back(name + " (missing)");
    } else if (rec->shape != t.shape()) {
      problems.push_back(name + " (expected " + shape_string(t.shape()) + ", found " +
                         shape_string(rec->shape) + ")");
    }
  }
  for (const auto& rec : container.records()) {
    const bool known = std::any_of(named.begin(), named.end(),
                                   [&](const auto& p) { return p.first == rec.name; });
    if (!known) problems.push_back(rec.name + " (unexpected)");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  for (auto& [name, t] : named) {
    auto values = container.at(name).template to_tensor<T>();
    auto src = values.data();
    std::copy(src.begin(), src.end(), t.data().begin());
  }
}

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const CalfModel<T>& model) {
  checkpoint_container(model).save(path);
}

template <std::floating_point T>
void load_checkpoint(CalfModel<T>& model, const std::filesystem::path& path) {
  restore_checkpoint(model, Container::load(path));
}

template struct CalfModel<float>;
template struct CalfModel<double>;

#define CALF_INSTANTIATE_MODEL(T)                                                               \
  template CalfModel<T> make_model<T>(const ModelConfig&, std::shared_ptr<const Backbone<T>>,   \
                                      PrincipalEmbeddings<T>, std::uint64_t);                   \
  template ForwardTrace<T> forward_temporal<T>(const CalfModel<T>&, const Tensor<T>&,           \
                                               std::size_t, Tensor<T>*);                        \
  template DualForward<T> forward_dual<T>(const CalfModel<T>&, const Tensor<T>&, std::size_t,   \
                                          bool);                                                \
  template Tensor<T> predict<T>(const CalfModel<T>&, const Tensor<T>&, std::size_t);            \
  template Container checkpoint_container<T>(const CalfModel<T>&);                              \
  template void restore_checkpoint<T>(CalfModel<T>&, const Container&);                         \
  template void save_checkpoint<T>(const std::filesystem::path&, const CalfModel<T>&);          \
  template void load_checkpoint<T>(CalfModel<T>&, const std::filesystem::path&);

CALF_INSTANTIATE_MODEL(float)
CALF_INSTANTIATE_MODEL(double)

#undef CALF_INSTANTIATE_MODEL

}  // namespace calf
