#include <gtest/gtest.h>

#include "calf/losses.hpp"
#include "support.hpp"

using namespace calf;
using testkit::random_matrix;

namespace {

Tensor<double> filled(std::size_t r, std::size_t c, std::vector<double> v) {
  return Tensor<double>({r, c}, std::move(v));
}

double mean_abs(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.numel());
}

}  // namespace

TEST(LayerWeights, GammaPowers) {
  auto w = layer_weights(3, 0.8);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_DOUBLE_EQ(w[0], 0.8 * 0.8);
  EXPECT_DOUBLE_EQ(w[1], 0.8);
  EXPECT_DOUBLE_EQ(w[2], 1.0);
  for (std::size_t L = 1; L < 8; ++L) EXPECT_EQ(layer_weights(L, 0.3).back(), 1.0);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.gamma = 1.2;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.lambda1 = -1;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.gamma = 0.0;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(SimSpec, FamilyDefaultsAndValidation) {
  auto ett = SimSpec::for_family("ett");
  EXPECT_EQ(ett.sup, LossKind::l1);
  EXPECT_EQ(ett.feature, LossKind::l1);
  EXPECT_EQ(ett.output, LossKind::l1);
  auto m4 = SimSpec::for_family("m4");
  EXPECT_EQ(m4.sup, LossKind::smape);
  EXPECT_EQ(m4.feature, LossKind::smooth_l1);
  EXPECT_EQ(m4.output, LossKind::mase);
  EXPECT_EQ(SimSpec::for_family("weather").sup, LossKind::smooth_l1);
  SimSpec bad;
  bad.feature = LossKind::mase;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(FeatureLoss, IdenticalTracesGiveZero) {
  std::vector<Tensor<double>> f{random_matrix<double>(4, 6, 1), random_matrix<double>(4, 6, 2)};
  std::mt19937_64 rng(3);
  auto proj = make_projection_stack<double>(2, 6, rng);
  proj.time = proj.text;
  EXPECT_EQ(feature_reg_loss<double>(f, f, proj, LossWeights{}, LossKind::l1).item(), 0.0);
}

TEST(FeatureLoss, HandComputedThreeLayers) {
  std::vector<Tensor<double>> text, time;
  std::vector<double> sims;
  for (std::uint64_t l = 0; l < 3; ++l) {
    text.push_back(random_matrix<double>(2, 4, 10 + l));
    time.push_back(random_matrix<double>(2, 4, 20 + l));
    sims.push_back(mean_abs(text.back(), time.back()));
  }
  auto proj = identity_projection_stack<double>(3, 4);
  LossWeights w;
  const double expected = 0.64 * sims[0] + 0.8 * sims[1] + 1.0 * sims[2];
  EXPECT_NEAR(feature_reg_loss<double>(text, time, proj, w, LossKind::l1).item(), expected, 1e-6);
}

TEST(FeatureLoss, HandBuiltTwoLayerL1) {
  // layer 1: |diff| = 1 everywhere; layer 2: |diff| = 0.5 everywhere.
  std::vector<Tensor<double>> text{filled(1, 2, {1, 2}), filled(1, 2, {0, 0})};
  std::vector<Tensor<double>> time{filled(1, 2, {0, 3}), filled(1, 2, {0.5, -0.5})};
  auto proj = identity_projection_stack<double>(2, 2);
  LossWeights w;
  w.gamma = 0.5;
  EXPECT_NEAR(feature_reg_loss<double>(text, time, proj, w, LossKind::l1).item(), 0.5 * 1.0 + 0.5, 1e-12);
}

TEST(FeatureLoss, ProjectionsApplied) {
  std::vector<Tensor<double>> text{filled(1, 2, {1, 1})};
  std::vector<Tensor<double>> time{filled(1, 2, {1, 1})};
  auto proj = identity_projection_stack<double>(1, 2);
  proj.text[0] = filled(2, 2, {2, 0, 0, 2});
  EXPECT_NEAR(feature_reg_loss<double>(text, time, proj, LossWeights{}, LossKind::l1).item(), 1.0, 1e-12);
}

TEST(FeatureLoss, Errors) {
  std::vector<Tensor<double>> two{random_matrix<double>(2, 4, 1), random_matrix<double>(2, 4, 2)};
  std::vector<Tensor<double>> one{random_matrix<double>(2, 4, 3)};
  auto proj = identity_projection_stack<double>(2, 4);
  EXPECT_THROW(feature_reg_loss<double>(two, one, proj, LossWeights{}, LossKind::l1), UsageError);
  EXPECT_THROW(feature_reg_loss<double>(two, two, proj, LossWeights{}, LossKind::smape), UsageError);
}

TEST(ProjectionStack, TwoMapsPerLayer) {
  std::mt19937_64 rng(1);
  auto p = make_projection_stack<float>(3, 5, rng);
  EXPECT_EQ(p.layers(), 3u);
  EXPECT_EQ(p.named().size(), 6u);
  for (const auto& [n, t] : p.named()) {
    EXPECT_EQ(t.shape(), (Shape{5, 5}));
    EXPECT_TRUE(t.requires_grad()) << n;
  }
}

TEST(OutputLoss, Examples) {
  auto y = random_matrix<double>(3, 4, 5);
  std::vector<double> scale{1.0, 2.0, 3.0};
  for (auto kind : {LossKind::l1, LossKind::smooth_l1, LossKind::mse, LossKind::smape, LossKind::mase})
    EXPECT_EQ(output_consistency_loss<double>(y, y, kind, scale).item(), 0.0) << to_string(kind);

  auto shifted = y.clone();
  for (auto& v : shifted.data()) v += 0.3;
  EXPECT_NEAR(output_consistency_loss<double>(shifted, y, LossKind::l1).item(), 0.3, 1e-12);

  auto a = Tensor<double>({2, 2}, 1.0);
  auto b = Tensor<double>({2, 2}, 0.0);
  std::vector<double> two{2.0, 2.0};
  EXPECT_NEAR(output_consistency_loss<double>(a, b, LossKind::mase, two).item(), 0.5, 1e-12);
}

TEST(OutputLoss, ZeroMaseScaleClampedWithWarning) {
  auto a = Tensor<double>({1, 2}, 1.0);
  auto b = Tensor<double>({1, 2}, 0.0);
  std::vector<double> zero{0.0};
  testkit::WarningCapture warnings;
  const double v = output_consistency_loss<double>(a, b, LossKind::mase, zero).item();
  EXPECT_NEAR(v, 1.0 / mase_scale_floor, 1e-3);
  EXPECT_EQ(warnings.messages.size(), 1u);
}

TEST(TotalLoss, Examples) {
  auto s = [](double v) { return Tensor<double>::scalar(v); };
  LossWeights w;
  EXPECT_NEAR(total_loss(s(1), s(0.5), s(2), w).item(), 1.52, 1e-12);
  LossWeights off;
  off.lambda1 = off.lambda2 = 0.0;
  EXPECT_EQ(total_loss(s(1.25), s(7), s(9), off).item(), 1.25);
  EXPECT_EQ(total_loss(s(0), s(0), s(0), w).item(), 0.0);
  EXPECT_EQ(total_loss(s(1.25), Tensor<double>{}, Tensor<double>{}, w).item(), 1.25);
}

TEST(TotalLoss, DisabledTermsCarryNoGradient) {
  auto x = Tensor<double>::scalar(1.0);
  auto feat = Tensor<double>::scalar(2.0);
  x.set_requires_grad(true);
  feat.set_requires_grad(true);
  LossWeights w;
  w.lambda1 = 0.0;
  backward(total_loss(scale(x, 3.0), feat, Tensor<double>{}, w));
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_TRUE(!feat.has_grad() || feat.grad()[0] == 0.0);
}

TEST(SeasonalNaiveScales, PerRow) {
  std::vector<double> rows{1, 2, 4, 7, /* row 2 */ 0, 0, 0, 0};
  auto s1 = seasonal_naive_scales<double>(rows, 4, 1);
  EXPECT_DOUBLE_EQ(s1[0], (1 + 2 + 3) / 3.0);
  EXPECT_DOUBLE_EQ(s1[1], 0.0);
  auto s2 = seasonal_naive_scales<double>(rows, 4, 2);
  EXPECT_DOUBLE_EQ(s2[0], (3 + 5) / 2.0);
}

TEST(Similarity, GradientMatchesFiniteDifferences) {
  auto p = random_matrix<double>(3, 5, 30);
  auto t = random_matrix<double>(3, 5, 31);
  for (auto& v : t.data()) v += 3.0;  // keeps SMAPE away from zero denominators
  for (auto& v : p.data()) v += 3.0;
  p.set_requires_grad(true);
  std::vector<double> scale{0.7, 1.1, 2.0};
  for (auto kind : {LossKind::mse, LossKind::smape, LossKind::mase}) {
    auto r = testkit::check_gradient(p, [&] { return similarity<double>(kind, p, t, scale); });
    EXPECT_LE(r.relative_error, 1e-4) << to_string(kind);
  }
}
