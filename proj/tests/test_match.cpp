#include <gtest/gtest.h>

#include <cmath>

#include "calf/match.hpp"
#include "calf/ops.hpp"
#include "support.hpp"

using namespace calf;
using testkit::random_matrix;

namespace {

MatchConfig small_config(std::size_t heads = 2) {
  MatchConfig c;
  c.input_len = 10;
  c.width = 8;
  c.heads = heads;
  return c;
}

MatchParams<double> params_for(const MatchConfig& c, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return init_match_params<double>(c, rng);
}

// Row r of `t` with its entries permuted to row perm[r].
Tensor<double> permute_rows(const Tensor<double>& t, const std::vector<std::size_t>& perm) {
  Tensor<double> out(t.shape());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(r, c) = t(perm[r], c);
  return out;
}

}  // namespace

TEST(MatchParams, AllTrainableWithExpectedShapes) {
  auto c = small_config();
  auto p = params_for(c);
  for (const auto& [name, t] : p.named()) EXPECT_TRUE(t.requires_grad()) << name;
  EXPECT_EQ(p.embed_weight.shape(), (Shape{10, 8}));
  EXPECT_EQ(p.cross_q_weight.shape(), (Shape{8, 8}));
  EXPECT_EQ(p.cross_k_weight.shape(), (Shape{8, 8}));
  EXPECT_EQ(p.cross_v_weight.shape(), (Shape{8, 8}));
}

TEST(MatchConfig, Validation) {
  auto c = small_config(3);
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_cross_scale("sqrt_d"), UsageError);
  EXPECT_EQ(parse_cross_scale("sqrt_head_dim"), CrossScale::sqrt_head_dim);
}

TEST(EmbedSeries, ShapeZeroAndDuplicates) {
  auto c = small_config();
  auto p = params_for(c);
  auto window = random_matrix<double>(10, 3, 2);
  for (std::size_t t = 0; t < 10; ++t) window(t, 2) = window(t, 0);
  auto tokens = embed_window(window, p);
  EXPECT_EQ(tokens.shape(), (Shape{3, 8}));
  for (std::size_t m = 0; m < 8; ++m) EXPECT_EQ(tokens(0, m), tokens(2, m));

  auto zero_bias = p;
  zero_bias.embed_bias = Tensor<double>({8}, 0.0);
  auto z = embed_window(Tensor<double>({10, 3}, 0.0), zero_bias);
  for (auto v : z.data()) EXPECT_EQ(v, 0.0);

  EXPECT_THROW(embed_window(Tensor<double>({9, 3}), p), DimensionError);
}

TEST(EmbedSeries, Linear) {
  auto c = small_config();
  auto p = params_for(c);
  auto w1 = random_matrix<double>(4, 10, 3);
  auto w2 = random_matrix<double>(4, 10, 4);
  const double a = 1.7, b = -0.6;
  auto bias = Tensor<double>({4, 8});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t m = 0; m < 8; ++m) bias(r, m) = p.embed_bias.data()[m];
  auto f = [&](const Tensor<double>& x) { return sub(embed_series(x, p), bias); };
  auto lhs = f(add(scale(w1, a), scale(w2, b)));
  auto rhs = add(scale(f(w1), a), scale(f(w2), b));
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.data()[i], rhs.data()[i], 1e-5);
}

TEST(Mhsa, SingleTokenUsesValueProjection) {
  auto c = small_config();
  auto p = params_for(c);
  auto x = random_matrix<double>(1, 8, 5);
  Tensor<double> probs;
  auto y = mhsa(x, p, c, 1, &probs);
  for (auto v : probs.data()) EXPECT_EQ(v, 1.0);
  auto h = layer_norm(x, p.mhsa_ln_gain, p.mhsa_ln_bias, 1e-5);
  auto expected = add(x, linear(linear(h, p.mhsa_v_weight, p.mhsa_v_bias), p.mhsa_o_weight, p.mhsa_o_bias));
  for (std::size_t m = 0; m < 8; ++m) EXPECT_NEAR(y(0, m), expected(0, m), 1e-12);
}

TEST(Mhsa, WeightsNormalizedAndFull) {
  auto c = small_config();
  auto p = params_for(c);
  auto x = random_matrix<double>(5, 8, 6);
  Tensor<double> probs;
  mhsa(x, p, c, 5, &probs);
  ASSERT_EQ(probs.shape(), (Shape{5, 2, 5}));
  bool later_key_used = false;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t h = 0; h < 2; ++h) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double v = probs.data()[(r * 2 + h) * 5 + j];
        s += v;
        if (j > r && v > 0.0) later_key_used = true;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  EXPECT_TRUE(later_key_used);  // no causal mask
}

TEST(Mhsa, PermutationEquivariant) {
  auto c = small_config();
  auto p = params_for(c);
  auto x = random_matrix<double>(4, 8, 7);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  auto y = mhsa(x, p, c, 4);
  auto yp = mhsa(permute_rows(x, perm), p, c, 4);
  auto expected = permute_rows(y, perm);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(yp.data()[i], expected.data()[i], 1e-12);
}

TEST(Mhsa, SamplesInABatchDoNotInteract) {
  auto c = small_config();
  auto p = params_for(c);
  auto x = random_matrix<double>(6, 8, 8);
  auto both = mhsa(x, p, c, 3);
  auto second = mhsa(slice_rows(x, 3, 6), p, c, 3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t m = 0; m < 8; ++m) EXPECT_NEAR(both(r + 3, m), second(r, m), 1e-13);
}

TEST(CrossMatch, SingleKeyGivesValueRow) {
  auto c = small_config();
  auto p = params_for(c);
  auto principal = random_matrix<double>(1, 8, 9);
  auto x = random_matrix<double>(3, 8, 10);
  auto out = cross_modal_match(x, principal, p, c, 3);
  auto value = matmul(principal, p.cross_v_weight);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t m = 0; m < 8; ++m) EXPECT_EQ(out(r, m), value(0, m));
}

TEST(CrossMatch, ConvexCombinationOfValueRows) {
  auto c = small_config();
  auto p = params_for(c);
  auto principal = random_matrix<double>(6, 8, 11);
  auto x = random_matrix<double>(4, 8, 12);
  Tensor<double> probs;
  auto out = cross_modal_match(x, principal, p, c, 4, &probs);
  ASSERT_EQ(probs.shape(), (Shape{4, 2, 6}));
  auto value = matmul(principal, p.cross_v_weight);
  for (std::size_t m = 0; m < 8; ++m) {
    double lo = value(0, m), hi = value(0, m);
    for (std::size_t j = 1; j < 6; ++j) {
      lo = std::min(lo, value(j, m));
      hi = std::max(hi, value(j, m));
    }
    for (std::size_t r = 0; r < 4; ++r) {
      EXPECT_GE(out(r, m), lo - 1e-12);
      EXPECT_LE(out(r, m), hi + 1e-12);
    }
  }
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t h = 0; h < 2; ++h) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_GE(probs.data()[(r * 2 + h) * 6 + j], 0.0);
        s += probs.data()[(r * 2 + h) * 6 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(CrossMatch, TemperatureFollowsConfiguredScale) {
  for (auto mode : {CrossScale::sqrt_channels, CrossScale::sqrt_head_dim}) {
    auto c = small_config(1);
    c.cross_scale = mode;
    auto p = params_for(c, 3);
    auto principal = random_matrix<double>(5, 8, 13);
    auto x = random_matrix<double>(3, 8, 14);
    Tensor<double> probs;
    cross_modal_match(x, principal, p, c, 3, &probs);
    auto q = matmul(x, p.cross_q_weight);
    auto k = matmul(principal, p.cross_k_weight);
    const double scale = mode == CrossScale::sqrt_channels ? 1.0 / std::sqrt(3.0) : 1.0 / std::sqrt(8.0);
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> logits(5);
      double mx = -1e300, z = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t m = 0; m < 8; ++m) s += q(r, m) * k(j, m);
        logits[j] = s * scale;
        mx = std::max(mx, logits[j]);
      }
      for (auto& l : logits) z += std::exp(l - mx);
      for (std::size_t j = 0; j < 5; ++j)
        EXPECT_NEAR(probs.data()[r * 5 + j], std::exp(logits[j] - mx) / z, 1e-12) << to_string(mode);
    }
  }
}

TEST(WordRelevance, NormalizationAndSymmetry) {
  auto c = small_config();
  auto p = params_for(c);
  auto x = random_matrix<double>(3, 8, 15);
  auto one = word_relevance(x, random_matrix<double>(1, 8, 16), p, c, 3);
  EXPECT_EQ(one.shape(), (Shape{3, 1}));
  for (auto v : one.data()) EXPECT_NEAR(v, 1.0, 1e-15);

  auto words = random_matrix<double>(4, 8, 17);
  for (std::size_t m = 0; m < 8; ++m) words(3, m) = words(1, m);
  auto rel = word_relevance(x, words, p, c, 3);
  ASSERT_EQ(rel.shape(), (Shape{3, 4}));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += rel(r, j);
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(rel(r, 1), rel(r, 3));
  }
  EXPECT_FALSE(rel.on_tape());
  EXPECT_THROW(word_relevance(x, Tensor<double>({0, 8}), p, c, 3), UsageError);
}
