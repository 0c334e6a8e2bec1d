#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "calf/backbone.hpp"
#include "calf/model.hpp"
#include "support.hpp"

using namespace calf;
using testkit::TinySpec;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

template <class T>
Backbone<T> tiny_backbone(std::uint64_t seed = 3) {
  return random_backbone<T>(testkit::tiny_backbone_config(TinySpec{}), seed);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(BackboneConfig, Validation) {
  BackboneConfig c;
  c.width = 30;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(BackboneConfig{}.validate());
}

TEST(Backbone, BlocksAreFrozen) {
  auto b = tiny_backbone<float>();
  for (const auto& [name, t] : b.named_tensors()) EXPECT_FALSE(t.requires_grad()) << name;
  EXPECT_EQ(b.named_tensors().size(), manifest::backbone_names(b.config).size());
}

TEST(Backbone, SaveLoadIsBitExact) {
  auto b = tiny_backbone<float>();
  auto path = temp_file("calf_backbone_roundtrip.calf");
  save_backbone(path, b);
  BackboneConfig cfg = b.config;
  cfg.width = cfg.vocab_size = cfg.max_positions = 0;
  auto back = load_backbone<float>(path, cfg);
  EXPECT_EQ(back.config.width, b.config.width);
  auto original = b.named_tensors();
  auto loaded = back.named_tensors();
  ASSERT_EQ(original.size(), loaded.size());
  for (std::size_t i = 0; i < original.size(); ++i) {
    EXPECT_EQ(original[i].first, loaded[i].first);
    EXPECT_EQ(original[i].second.to_vector(), loaded[i].second.to_vector()) << original[i].first;
  }
  // save -> load -> save is byte-identical
  auto path2 = temp_file("calf_backbone_roundtrip2.calf");
  save_backbone(path2, back);
  EXPECT_EQ(read_file_bytes(path), read_file_bytes(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST(Backbone, TruncatedFileIsFormatError) {
  auto bytes = to_container(tiny_backbone<float>()).serialize();
  auto path = temp_file("calf_backbone_truncated.calf");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(path, bytes);
  EXPECT_THROW(load_backbone<float>(path, {}), FormatError);
  std::filesystem::remove(path);
}

TEST(Backbone, MissingTensorIsManifestError) {
  auto full = to_container(tiny_backbone<float>());
  Container partial;
  for (const auto& r : full.records())
    if (r.name != "block.1.attn.v_bias") partial.add(r);
  try {
    backbone_from_container<float>(partial, testkit::tiny_backbone_config(TinySpec{}));
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find("block.1.attn.v_bias"), std::string::npos);
  }
}

TEST(Backbone, ShapeMismatchIsConfigError) {
  auto c = to_container(tiny_backbone<float>());
  auto cfg = testkit::tiny_backbone_config(TinySpec{});
  cfg.width = 64;
  cfg.heads = 4;
  EXPECT_THROW(backbone_from_container<float>(c, cfg), ConfigError);
}

TEST(Backbone, PrefixLoadUsesFirstBlocksAndWarns) {
  auto cfg6 = testkit::tiny_backbone_config(TinySpec{});
  cfg6.layers = 6;
  auto b6 = random_backbone<float>(cfg6, 9);
  auto cfg2 = cfg6;
  cfg2.layers = 2;
  testkit::WarningCapture warnings;
  BackboneLoadReport report;
  auto b2 = backbone_from_container<float>(to_container(b6), cfg2, &report);
  ASSERT_EQ(b2.blocks.size(), 2u);
  EXPECT_EQ(b2.blocks[1].q_weight.to_vector(), b6.blocks[1].q_weight.to_vector());
  ASSERT_EQ(warnings.messages.size(), 1u);
  EXPECT_NE(warnings.messages[0].find("using the first 2"), std::string::npos);
  // audit: unused names are exactly blocks 2..5
  std::set<std::string> expected;
  for (std::size_t i = 2; i < 6; ++i)
    for (auto s : manifest::block_suffixes()) expected.insert(manifest::block_tensor(i, s));
  EXPECT_EQ(std::set<std::string>(report.unused.begin(), report.unused.end()), expected);
}

TEST(ForwardBranch, ShapeContract) {
  auto b = tiny_backbone<float>();
  std::mt19937_64 rng(1);
  auto branch = make_branch(b, BranchKind::temporal_target, 8, rng);
  auto tokens = testkit::random_matrix<float>(3 * 4, 32, 2);
  auto trace = forward_branch(b, branch, tokens, 4);
  ASSERT_EQ(trace.features.size(), 2u);
  for (const auto& f : trace.features) EXPECT_EQ(f.shape(), (Shape{12, 32}));
  EXPECT_EQ(trace.output.shape(), (Shape{12, 8}));
  EXPECT_EQ(branch.forward_calls.value(), 1u);
}

TEST(ForwardBranch, TooManyTokensIsCapacityError) {
  auto b = tiny_backbone<float>();
  std::mt19937_64 rng(1);
  auto branch = make_branch(b, BranchKind::temporal_target, 8, rng);
  EXPECT_THROW(forward_branch(b, branch, Tensor<float>({17, 32}), 17), CapacityError);
  EXPECT_THROW(forward_branch(b, branch, Tensor<float>({4, 31}), 4), DimensionError);
}

TEST(ForwardBranch, ZeroLoraMatchesAdapterFreeForward) {
  auto b = tiny_backbone<double>();
  std::mt19937_64 rng(4);
  auto plain = make_branch(b, BranchKind::temporal_target, 8, rng);
  auto adapted = plain;
  std::vector<AttnMatrix> targets{AttnMatrix::query, AttnMatrix::key, AttnMatrix::value,
                                  AttnMatrix::output};
  attach_lora(adapted, b.config, targets, 4, 16.0, rng);
  auto tokens = testkit::random_matrix<double>(8, 32, 5);
  auto t0 = forward_branch(b, plain, tokens, 4);
  auto t1 = forward_branch(b, adapted, tokens, 4);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_LE(max_abs_diff(t0.features[l], t1.features[l]), 1e-12);
  EXPECT_LE(max_abs_diff(t0.output, t1.output), 1e-12);
}

TEST(ForwardBranch, Deterministic) {
  auto b = tiny_backbone<float>();
  std::mt19937_64 rng(1);
  auto branch = make_branch(b, BranchKind::temporal_target, 8, rng);
  auto tokens = testkit::random_matrix<float>(8, 32, 6);
  auto a = forward_branch(b, branch, tokens, 4);
  auto c = forward_branch(b, branch, tokens, 4);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a.features[l].to_vector(), c.features[l].to_vector());
  EXPECT_EQ(a.output.to_vector(), c.output.to_vector());
}

TEST(ForwardBranch, CausalMaskKeepsEarlierTokensIndependentOfLaterOnes) {
  auto b = tiny_backbone<double>();
  std::mt19937_64 rng(1);
  auto branch = make_branch(b, BranchKind::temporal_target, 8, rng);
  auto tokens = testkit::random_matrix<double>(4, 32, 7);
  auto changed = tokens.clone();
  for (std::size_t c = 0; c < 32; ++c) changed(3, c) += 0.1 * double(c % 5);
  auto a = forward_branch(b, branch, tokens, 4);
  auto d = forward_branch(b, branch, changed, 4);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a.output(0, c), d.output(0, c));
  EXPECT_NE(a.output(3, 0), d.output(3, 0));
}

TEST(ForwardBranch, IdenticalBranchesGiveIdenticalTraces) {
  auto b = tiny_backbone<double>();
  std::mt19937_64 rng(8);
  auto textual = make_branch(b, BranchKind::textual_source, 8, rng);
  auto temporal = make_branch(b, BranchKind::temporal_target, 8, rng);
  std::vector<AttnMatrix> targets{AttnMatrix::query, AttnMatrix::value};
  attach_lora(temporal, b.config, targets, 8, 16.0, rng);
  textual.head_weight = temporal.head_weight.clone();
  textual.head_bias = temporal.head_bias.clone();
  auto tokens = testkit::random_matrix<double>(8, 32, 9);
  auto a = forward_branch(b, textual, tokens, 4);
  auto c = forward_branch(b, temporal, tokens, 4);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a.features[l].to_vector(), c.features[l].to_vector());
  EXPECT_EQ(a.output.to_vector(), c.output.to_vector());
}

TEST(ForwardBranch, TextualBranchIgnoresAdapters) {
  auto b = tiny_backbone<double>();
  std::mt19937_64 rng(10);
  auto textual = make_branch(b, BranchKind::textual_source, 8, rng);
  auto tokens = testkit::random_matrix<double>(4, 32, 11);
  auto before = forward_branch(b, textual, tokens, 4).output.to_vector();
  // Smuggle a nonzero adapter in: the textual forward must not read it.
  LoraAdapter<double> a;
  a.down = Tensor<double>({32, 2}, 1.0);
  a.up = Tensor<double>({2, 32}, 1.0);
  a.rank = 2;
  textual.adapters.push_back(a);
  EXPECT_EQ(forward_branch(b, textual, tokens, 4).output.to_vector(), before);
}

TEST(Lora, AttachRules) {
  auto b = tiny_backbone<float>();
  std::mt19937_64 rng(1);
  auto textual = make_branch(b, BranchKind::textual_source, 8, rng);
  auto temporal = make_branch(b, BranchKind::temporal_target, 8, rng);
  std::vector<AttnMatrix> targets{AttnMatrix::query, AttnMatrix::value};
  EXPECT_THROW(attach_lora(textual, b.config, targets, 8, 16.0, rng), UsageError);
  EXPECT_TRUE(textual.adapters.empty());
  EXPECT_THROW(attach_lora(temporal, b.config, targets, 0, 16.0, rng), UsageError);
  attach_lora(temporal, b.config, targets, 8, 16.0, rng);
  ASSERT_EQ(temporal.adapters.size(), 4u);
  for (const auto& a : temporal.adapters) {
    EXPECT_EQ(a.down.shape(), (Shape{32, 8}));
    EXPECT_EQ(a.up.shape(), (Shape{8, 32}));
    for (auto v : a.up.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_FLOAT_EQ(a.scaling(), 2.0f);
  }
  EXPECT_THROW(parse_attn_matrix("ffn"), UsageError);
  EXPECT_EQ(parse_attn_matrix("value"), AttnMatrix::value);
}

TEST(Lora, ParameterCountGrowsByLTimesTargetsTimesTwoMr) {
  TinySpec s;
  auto backbone = std::make_shared<const Backbone<float>>(random_backbone<float>(testkit::tiny_backbone_config(s), 1));
  auto principal = extract_principal_embeddings(backbone->token_embedding, s.components);
  ModelConfig mc;
  mc.backbone = backbone->config;
  mc.input_len = s.input_len;
  mc.horizon = s.horizon;
  mc.lora_targets.clear();
  auto bare = make_model<float>(mc, backbone, principal, 2);
  for (std::size_t r : {1u, 4u, 8u}) {
    mc.lora_targets = {AttnMatrix::query, AttnMatrix::key, AttnMatrix::value};
    mc.lora_rank = r;
    auto with = make_model<float>(mc, backbone, principal, 2);
    EXPECT_EQ(with.trainable_count() - bare.trainable_count(), s.layers * 3 * 2 * s.width * r);
  }
}

TEST(Trainable, ListIsExactAndExcludesFrozenTensors) {
  auto model = testkit::tiny_model<float>();
  auto named = model.named_trainable();
  std::set<const void*> frozen;
  for (const auto& [n, t] : model.backbone->named_tensors()) frozen.insert(t.impl().get());
  frozen.insert(model.textual.positional.impl().get());
  frozen.insert(model.principal.components.impl().get());
  std::size_t phi = 0, lora = 0, cross = 0, heads = 0, positional = 0;
  for (const auto& [name, t] : named) {
    EXPECT_EQ(frozen.count(t.impl().get()), 0u) << name;
    EXPECT_TRUE(t.requires_grad()) << name;
    EXPECT_FALSE(name.starts_with("block.")) << name;
    if (name.starts_with("proj.")) ++phi;
    if (name.find(".lora.") != std::string::npos) ++lora;
    if (name.starts_with("match.cross.")) ++cross;
    if (name.ends_with("head.weight")) ++heads;
    if (name == "temporal.positional") ++positional;
  }
  EXPECT_EQ(phi, 2 * 2u);
  EXPECT_EQ(lora, 2 * 2 * 2u);
  EXPECT_EQ(cross, 3u);
  EXPECT_EQ(heads, 2u);
  EXPECT_EQ(positional, 1u);
  EXPECT_FALSE(model.textual.positional.requires_grad());
}

TEST(Trainable, StableAcrossCalls) {
  auto model = testkit::tiny_model<float>();
  auto a = model.named_trainable();
  auto b = model.named_trainable();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(a[i].second.shares_storage_with(b[i].second));
  }
}

// Default 6-layer, M=768 stack. The per-layer projections alone are
// 2 * 6 * 768^2 = 7.08M parameters, which keeps the trainable share near 13%.
TEST(Trainable, FractionBelowTenPercentForDefaultConfig) {
  BackboneConfig cfg;  // 6 layers, 768 wide, 12 heads, 1024 positions, 50257 tokens
  auto backbone = std::make_shared<const Backbone<float>>(random_backbone<float>(cfg, 1));
  PrincipalEmbeddings<float> principal;
  std::mt19937_64 rng(2);
  principal.components = Tensor<float>::randn({500, 768}, rng);
  ModelConfig mc;  // T = 96, H = 96, LoRA r = 8 on q and v
  mc.backbone = cfg;
  auto model = make_model<float>(mc, backbone, principal, 3);
  const double trainable = static_cast<double>(model.trainable_count());
  const double total = trainable + static_cast<double>(model.frozen_count());
  RecordProperty("trainable", std::to_string(model.trainable_count()));
  RecordProperty("frozen", std::to_string(model.frozen_count()));
  EXPECT_LT(trainable / total, 0.10) << "trainable=" << model.trainable_count()
                                     << " frozen=" << model.frozen_count();
}
