#include "calf/backbone.hpp"

#include <array>
#include <cmath>
#include <set>

#include "calf/log.hpp"
#include "calf/ops.hpp"

namespace calf {

void BackboneConfig::validate() const {
  if (layers < 1) throw ConfigError("backbone needs at least one layer");
  if (heads < 1) throw ConfigError("backbone needs at least one attention head");
  if (width != 0 && width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("layer-norm epsilon must be positive");
}

AttnMatrix parse_attn_matrix(std::string_view name) {
  if (name == "q" || name == "query") return AttnMatrix::query;
  if (name == "k" || name == "key") return AttnMatrix::key;
  if (name == "v" || name == "value") return AttnMatrix::value;
  if (name == "o" || name == "output") return AttnMatrix::output;
  throw UsageError("'" + std::string(name) + "' is not an attention matrix (q, k, v, o)");
}

std::string_view to_string(AttnMatrix m) noexcept {
  switch (m) {
    case AttnMatrix::query: return "q";
    case AttnMatrix::key: return "k";
    case AttnMatrix::value: return "v";
    case AttnMatrix::output: return "o";
  }
  return "?";
}

namespace manifest {

namespace {
constexpr std::array<std::string_view, 16> suffixes = {
    "ln_1.gain",      "ln_1.bias",     "attn.q_weight",   "attn.q_bias",
    "attn.k_weight",  "attn.k_bias",   "attn.v_weight",   "attn.v_bias",
    "attn.o_weight",  "attn.o_bias",   "ln_2.gain",       "ln_2.bias",
    "mlp.fc_weight",  "mlp.fc_bias",   "mlp.proj_weight", "mlp.proj_bias",
};
}  // namespace

std::string block_tensor(std::size_t block, std::string_view suffix) {
  return "block." + std::to_string(block) + "." + std::string(suffix);
}

std::span<const std::string_view> block_suffixes() { return suffixes; }

std::vector<std::string> backbone_names(const BackboneConfig& config) {
  std::vector<std::string> names{std::string(token_embedding), std::string(position_embedding)};
  for (std::size_t i = 0; i < config.layers; ++i)
    for (auto s : suffixes) names.push_back(block_tensor(i, s));
  names.emplace_back(final_ln_gain);
  names.emplace_back(final_ln_bias);
  return names;
}

}  // namespace manifest

template <std::floating_point T>
const Tensor<T>& TransformerBlockParams<T>::weight(AttnMatrix m) const {
  switch (m) {
    case AttnMatrix::query: return q_weight;
    case AttnMatrix::key: return k_weight;
    case AttnMatrix::value: return v_weight;
    case AttnMatrix::output: return o_weight;
  }
  return q_weight;
}

template <std::floating_point T>
const Tensor<T>& TransformerBlockParams<T>::bias(AttnMatrix m) const {
  switch (m) {
    case AttnMatrix::query: return q_bias;
    case AttnMatrix::key: return k_bias;
    case AttnMatrix::value: return v_bias;
    case AttnMatrix::output: return o_bias;
  }
  return q_bias;
}

namespace {

// Calls f(suffix, tensor) for every block tensor in manifest order.
template <class Block, class F>
void visit_block(Block& b, F&& f) {
  auto s = manifest::block_suffixes();
  f(s[0], b.ln1_gain);
  f(s[1], b.ln1_bias);
  f(s[2], b.q_weight);
  f(s[3], b.q_bias);
  f(s[4], b.k_weight);
  f(s[5], b.k_bias);
  f(s[6], b.v_weight);
  f(s[7], b.v_bias);
  f(s[8], b.o_weight);
  f(s[9], b.o_bias);
  f(s[10], b.ln2_gain);
  f(s[11], b.ln2_bias);
  f(s[12], b.fc_weight);
  f(s[13], b.fc_bias);
  f(s[14], b.proj_weight);
  f(s[15], b.proj_bias);
}

}  // namespace

template <std::floating_point T>
std::vector<std::pair<std::string_view, Tensor<T>*>> TransformerBlockParams<T>::named_mut() {
  std::vector<std::pair<std::string_view, Tensor<T>*>> out;
  visit_block(*this, [&](std::string_view n, Tensor<T>& t) { out.emplace_back(n, &t); });
  return out;
}

template <std::floating_point T>
std::vector<std::pair<std::string_view, Tensor<T>>> TransformerBlockParams<T>::named() const {
  std::vector<std::pair<std::string_view, Tensor<T>>> out;
  visit_block(*this, [&](std::string_view n, const Tensor<T>& t) { out.emplace_back(n, t); });
  return out;
}

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> Backbone<T>::named_tensors() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back(std::string(manifest::token_embedding), token_embedding);
  out.emplace_back(std::string(manifest::position_embedding), position_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    for (auto& [suffix, t] : blocks[i].named()) out.emplace_back(manifest::block_tensor(i, suffix), t);
  out.emplace_back(std::string(manifest::final_ln_gain), final_ln_gain);
  out.emplace_back(std::string(manifest::final_ln_bias), final_ln_bias);
  return out;
}

template <std::floating_point T>
std::size_t Backbone<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t.numel();
  return n;
}

namespace {

// Expected shape of a block tensor given width M.
Shape block_shape(std::string_view suffix, std::size_t m) {
  if (suffix == "mlp.fc_weight") return {m, 4 * m};
  if (suffix == "mlp.fc_bias") return {4 * m};
  if (suffix == "mlp.proj_weight") return {4 * m, m};
  if (suffix.ends_with("_weight")) return {m, m};
  return {m};
}

}  // namespace

template <std::floating_point T>
Backbone<T> random_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.width == 0 || config.vocab_size == 0 || config.max_positions == 0) {
    throw ConfigError("random_backbone needs explicit width, vocab_size and max_positions");
  }
  std::mt19937_64 rng(seed);
  const std::size_t m = config.width;
  const T std_w = T(0.02);
  const T std_resid = static_cast<T>(0.02 / std::sqrt(2.0 * static_cast<double>(config.layers)));
  Backbone<T> b;
  b.config = config;
  b.token_embedding = Tensor<T>::randn({config.vocab_size, m}, rng, std_w);
  b.position_embedding = Tensor<T>::randn({config.max_positions, m}, rng, T(0.01));
  for (std::size_t i = 0; i < config.layers; ++i) {
    TransformerBlockParams<T> blk;
    for (auto& [suffix, ptr] : blk.named_mut()) {
      const Shape shape = block_shape(suffix, m);
      if (suffix.ends_with("gain")) {
        *ptr = Tensor<T>(shape, T{1});
      } else if (suffix.ends_with("bias")) {
        *ptr = Tensor<T>::zeros(shape);
      } else if (suffix == "attn.o_weight" || suffix == "mlp.proj_weight") {
        *ptr = Tensor<T>::randn(shape, rng, std_resid);
      } else {
        *ptr = Tensor<T>::randn(shape, rng, std_w);
      }
    }
    b.blocks.push_back(std::move(blk));
  }
  b.final_ln_gain = Tensor<T>({m}, T{1});
  b.final_ln_bias = Tensor<T>::zeros({m});
  return b;
}

template <std::floating_point T>
Backbone<T> backbone_from_container(const Container& container, const BackboneConfig& requested,
                                    BackboneLoadReport* report) {
  requested.validate();
  BackboneLoadReport local;
  BackboneLoadReport& rep = report ? *report : local;
  std::set<std::string> consumed;

  auto fetch = [&](const std::string& name, const Shape& expected) -> Tensor<T> {
    const auto& rec = container.at(name);
    if (rec.shape != expected) {
      throw ConfigError("tensor '" + name + "' has shape " + shape_string(rec.shape) +
                        ", config expects " + shape_string(expected));
    }
    consumed.insert(name);
    return rec.template to_tensor<T>();
  };

  BackboneConfig config = requested;
  const auto& wte = container.at(manifest::token_embedding);
  if (wte.shape.size() != 2) {
    throw ConfigError("wte.weight must be a matrix, got " + shape_string(wte.shape));
  }
  if (config.width == 0) config.width = wte.shape[1];
  if (config.vocab_size == 0) config.vocab_size = wte.shape[0];
  const auto& wpe = container.at(manifest::position_embedding);
  if (wpe.shape.size() != 2) {
    throw ConfigError("wpe.weight must be a matrix, got " + shape_string(wpe.shape));
  }
  if (config.max_positions == 0) config.max_positions = wpe.shape[0];
  config.validate();
  const std::size_t m = config.width;

  Backbone<T> b;
  b.config = config;
  b.token_embedding = fetch(std::string(manifest::token_embedding), {config.vocab_size, m});
  b.position_embedding = fetch(std::string(manifest::position_embedding), {config.max_positions, m});
  for (std::size_t i = 0; i < config.layers; ++i) {
    TransformerBlockParams<T> blk;
    for (auto& [suffix, ptr] : blk.named_mut())
      *ptr = fetch(manifest::block_tensor(i, suffix), block_shape(suffix, m));
    b.blocks.push_back(std::move(blk));
  }
  b.final_ln_gain = fetch(std::string(manifest::final_ln_gain), {m});
  b.final_ln_bias = fetch(std::string(manifest::final_ln_bias), {m});

  std::size_t extra_blocks = 0;
  std::vector<std::string> unknown;
  for (const auto& rec : container.records()) {
    if (consumed.count(rec.name)) continue;
    rep.unused.push_back(rec.name);
    if (rec.name.starts_with("block.")) {
      ++extra_blocks;
    } else {
      unknown.push_back(rec.name);
    }
  }
  if (extra_blocks > 0) {
    std::set<std::string> block_ids;
    for (const auto& n : rep.unused) {
      if (n.starts_with("block.")) block_ids.insert(n.substr(6, n.find('.', 6) - 6));
    }
    rep.warnings.push_back("weight file holds " + std::to_string(config.layers + block_ids.size()) +
                           " blocks; using the first " + std::to_string(config.layers));
  }
  for (const auto& n : unknown) rep.warnings.push_back("unexpected tensor '" + n + "' ignored");
  for (const auto& w : rep.warnings) warn(w);
  return b;
}

template <std::floating_point T>
Backbone<T> load_backbone(const std::filesystem::path& path, const BackboneConfig& config,
                          BackboneLoadReport* report) {
  return backbone_from_container<T>(Container::load(path), config, report);
}

template <std::floating_point T>
Container to_container(const Backbone<T>& backbone) {
  Container c;
  for (const auto& [name, t] : backbone.named_tensors()) c.add(name, t);
  return c;
}

template <std::floating_point T>
void save_backbone(const std::filesystem::path& path, const Backbone<T>& backbone) {
  to_container(backbone).save(path);
}

template <std::floating_point T>
BranchParams<T> make_branch(const Backbone<T>& backbone, BranchKind kind, std::size_t horizon,
                            std::mt19937_64& rng) {
  if (horizon == 0) throw UsageError("forecast horizon must be at least 1");
  const std::size_t m = backbone.config.width;
  BranchParams<T> branch;
  branch.kind = kind;
  branch.positional = backbone.position_embedding.clone();
  branch.positional.set_requires_grad(kind == BranchKind::temporal_target);
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(m)));
  branch.head_weight = Tensor<T>::uniform({m, horizon}, rng, -bound, bound);
  branch.head_bias = Tensor<T>::uniform({horizon}, rng, -bound, bound);
  branch.head_weight.set_requires_grad(true);
  branch.head_bias.set_requires_grad(true);
  return branch;
}

template <std::floating_point T>
void attach_lora(BranchParams<T>& branch, const BackboneConfig& config,
                 std::span<const AttnMatrix> targets, std::size_t rank, double alpha,
                 std::mt19937_64& rng) {
  if (branch.kind != BranchKind::temporal_target) {
    throw UsageError("LoRA adapters can only be attached to the temporal branch");
  }
  if (rank == 0) throw UsageError("LoRA rank must be at least 1");
  if (targets.empty()) throw UsageError("LoRA needs at least one target matrix");
  std::set<AttnMatrix> seen;
  for (auto t : targets) {
    if (!seen.insert(t).second) {
      throw UsageError("LoRA target '" + std::string(to_string(t)) + "' listed twice");
    }
  }
  const std::size_t m = config.width;
  for (const auto& existing : branch.adapters) {
    if (seen.count(existing.target)) {
      throw UsageError("LoRA target '" + std::string(to_string(existing.target)) +
                       "' already has an adapter");
    }
  }
  const T stddev = static_cast<T>(1.0 / std::sqrt(static_cast<double>(m)));
  for (std::size_t block = 0; block < config.layers; ++block) {
    for (auto target : targets) {
      LoraAdapter<T> a;
      a.block = block;
      a.target = target;
      a.rank = rank;
      a.alpha = alpha;
      a.down = Tensor<T>::randn({m, rank}, rng, stddev);
      a.up = Tensor<T>::zeros({rank, m});
      a.down.set_requires_grad(true);
      a.up.set_requires_grad(true);
      branch.adapters.push_back(std::move(a));
    }
  }
}

namespace {

template <std::floating_point T>
Tensor<T> project(const Tensor<T>& h, const TransformerBlockParams<T>& blk, AttnMatrix m,
                  const LoraAdapter<T>* adapter) {
  auto y = linear(h, blk.weight(m), blk.bias(m));
  if (!adapter) return y;
  auto delta = matmul(matmul(h, adapter->down), adapter->up);
  return add(y, scale(delta, adapter->scaling()));
}

}  // namespace

template <std::floating_point T>
ForwardTrace<T> forward_branch(const Backbone<T>& backbone, const BranchParams<T>& branch,
                               const Tensor<T>& tokens, std::size_t channels) {
  const auto& cfg = backbone.config;
  if (tokens.rank() != 2 || tokens.cols() != cfg.width) {
    throw DimensionError("forward_branch: tokens " + shape_string(tokens.shape()) +
                         " do not have width " + std::to_string(cfg.width));
  }
  const std::size_t rows = tokens.rows();
  const std::size_t c = channels == 0 ? rows : channels;
  if (c == 0 || rows % c != 0) {
    throw DimensionError("forward_branch: " + std::to_string(rows) + " token rows are not a " +
                         "multiple of " + std::to_string(c) + " channels");
  }
  if (c > branch.positional.rows()) {
    throw CapacityError("forward_branch: " + std::to_string(c) + " tokens exceed the " +
                        std::to_string(branch.positional.rows()) + " available positions");
  }
  branch.forward_calls.increment();

  // Adapter lookup per block; the textual branch never has any.
  const std::size_t nblocks = backbone.blocks.size();
  std::vector<std::array<const LoraAdapter<T>*, 4>> lora(nblocks, {nullptr, nullptr, nullptr, nullptr});
  if (branch.kind == BranchKind::temporal_target) {
    for (const auto& a : branch.adapters) {
      if (a.block < nblocks) lora[a.block][static_cast<std::size_t>(a.target)] = &a;
    }
  }

  const T eps = static_cast<T>(cfg.ln_eps);
  AttentionSpec spec;
  spec.heads = cfg.heads;
  spec.scale = 1.0 / std::sqrt(static_cast<double>(cfg.width / cfg.heads));
  spec.query_group = c;
  spec.key_group = c;
  spec.causal = cfg.causal_mask;

  ForwardTrace<T> trace;
  auto x = add_rows(tokens, slice_rows(branch.positional, 0, c));
  for (std::size_t i = 0; i < nblocks; ++i) {
    const auto& blk = backbone.blocks[i];
    const auto& ad = lora[i];
    auto h = layer_norm(x, blk.ln1_gain, blk.ln1_bias, eps);
    auto q = project(h, blk, AttnMatrix::query, ad[0]);
    auto k = project(h, blk, AttnMatrix::key, ad[1]);
    auto v = project(h, blk, AttnMatrix::value, ad[2]);
    auto a = attention(q, k, v, spec);
    x = add(x, project(a, blk, AttnMatrix::output, ad[3]));
    auto h2 = layer_norm(x, blk.ln2_gain, blk.ln2_bias, eps);
    auto mlp = linear(gelu(linear(h2, blk.fc_weight, blk.fc_bias)), blk.proj_weight, blk.proj_bias);
    x = add(x, mlp);
    trace.features.push_back(x);
  }
  auto final_h = layer_norm(x, backbone.final_ln_gain, backbone.final_ln_bias, eps);
  trace.output = linear(final_h, branch.head_weight, branch.head_bias);
  return trace;
}

template struct TransformerBlockParams<float>;
template struct TransformerBlockParams<double>;
template struct Backbone<float>;
template struct Backbone<double>;

#define CALF_INSTANTIATE_BACKBONE(T)                                                            \
  template Backbone<T> random_backbone<T>(const BackboneConfig&, std::uint64_t);                \
  template Backbone<T> backbone_from_container<T>(const Container&, const BackboneConfig&,      \
                                                  BackboneLoadReport*);                         \
  template Backbone<T> load_backbone<T>(const std::filesystem::path&, const BackboneConfig&,    \
                                        BackboneLoadReport*);                                   \
  template Container to_container<T>(const Backbone<T>&);                                       \
  template void save_backbone<T>(const std::filesystem::path&, const Backbone<T>&);             \
  template BranchParams<T> make_branch<T>(const Backbone<T>&, BranchKind, std::size_t,          \
                                          std::mt19937_64&);                                    \
  template void attach_lora<T>(BranchParams<T>&, const BackboneConfig&,                         \
                               std::span<const AttnMatrix>, std::size_t, double,                \
                               std::mt19937_64&);                                               \
  template ForwardTrace<T> forward_branch<T>(const Backbone<T>&, const BranchParams<T>&,        \
                                             const Tensor<T>&, std::size_t);

CALF_INSTANTIATE_BACKBONE(float)
CALF_INSTANTIATE_BACKBONE(double)

#undef CALF_INSTANTIATE_BACKBONE

}  // namespace calf
