// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ttc/error.hpp"
#include "ttc/repr_align.hpp"

using namespace ttc;

namespace {

Tensor shift(const Tensor& k, const Tensor& delta) { return add(k, broadcast_rows(delta, k.rows())); }

}  // namespace

TEST(KeyShiftRatio, BoundaryCases) {
  const Tensor same = broadcast_rows(Tensor::matrix({{1.0, -2.0, 0.5}}), 5);
  EXPECT_NEAR(key_shift_ratio(same).shift_ratio, 1.0, 1e-12);
  const Tensor centered = Tensor::matrix({{1.0, 2.0}, {-1.0, -2.0}});
  EXPECT_NEAR(key_shift_ratio(centered).shift_ratio, 0.0, 1e-15);
  const KeyStats zero = key_shift_ratio(Tensor::zeros({3, 2}));
  EXPECT_TRUE(std::isfinite(zero.shift_ratio));
}

TEST(KeyShiftRatio, MatchesLoopAndIsScaleInvariant) {
  Rng rng(51);
  const Tensor k = Tensor::randn({12, 5}, rng);
  std::vector<double> mean(5, 0.0);
  double norms = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      mean[c] += k(i, c) / 12.0;
      sq += k(i, c) * k(i, c);
    }
    norms += std::sqrt(sq) / 12.0;
  }
  double mn = 0.0;
  for (double m : mean) mn += m * m;
  const KeyStats s = key_shift_ratio(k);
  EXPECT_NEAR(s.shift_ratio, std::sqrt(mn) / norms, 1e-12);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(s.mean_key(0, c), mean[c], 1e-14);
  EXPECT_NEAR(key_shift_ratio(scale(k, 37.0)).shift_ratio, s.shift_ratio, 1e-12);
}

TEST(InstanceNorm, MatchesPerChannelLoop) {
  Rng rng(52);
  const Tensor k = Tensor::randn({7, 3}, rng, 2.0);
  const Tensor n = instance_norm_keys(k);
  for (std::size_t c = 0; c < 3; ++c) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 7; ++i) mu += k(i, c) / 7.0;
    for (std::size_t i = 0; i < 7; ++i) var += (k(i, c) - mu) * (k(i, c) - mu) / 7.0;
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(n(i, c), (k(i, c) - mu) / std::sqrt(var + kNormEps), 1e-12);
  }
}

TEST(InstanceNorm, CancelsShiftAndScalesChannels) {
  Rng rng(53);
  const Tensor k = Tensor::randn({9, 4}, rng);
  const Tensor delta = Tensor::randn({1, 4}, rng, 5.0);
  EXPECT_LT(max_abs_diff(instance_norm_keys(shift(k, delta)), instance_norm_keys(k)), 1e-12);
  const Tensor zero = instance_norm_keys(broadcast_rows(Tensor::matrix({{3.0, -1.0}}), 4));
  EXPECT_EQ(max_abs_diff(zero, Tensor::zeros({4, 2})), 0.0);
}

TEST(KeyNorm, VariantsThatDoNotCancelShifts) {
  Rng rng(54);
  const Tensor k = Tensor::randn({9, 4}, rng);
  const Tensor ks = shift(k, Tensor::matrix({{1.0, -0.5, 0.3, 0.8}}));
  for (auto kind : {KeyNorm::instance_no_mean, KeyNorm::layernorm, KeyNorm::rmsnorm, KeyNorm::none}) {
    EXPECT_GT(max_abs_diff(normalize_keys(k, kind), normalize_keys(ks, kind)), 1e-6) << to_string(kind);
  }
  EXPECT_LT(max_abs_diff(normalize_keys(k, KeyNorm::instance_no_std), normalize_keys(ks, KeyNorm::instance_no_std)),
            1e-12);
}

TEST(TokenNorm, LayerAndRmsMatchLoops) {
  Rng rng(55);
  const Tensor k = Tensor::randn({4, 6}, rng);
  const Tensor ln = token_norm(k, KeyNorm::layernorm), rms = token_norm(k, KeyNorm::rmsnorm);
  for (std::size_t i = 0; i < 4; ++i) {
    double mu = 0.0, var = 0.0, ms = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      mu += k(i, c) / 6.0;
      ms += k(i, c) * k(i, c) / 6.0;
    }
    for (std::size_t c = 0; c < 6; ++c) var += (k(i, c) - mu) * (k(i, c) - mu) / 6.0;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_NEAR(ln(i, c), (k(i, c) - mu) / std::sqrt(var + kNormEps), 1e-12);
      EXPECT_NEAR(rms(i, c), k(i, c) / std::sqrt(ms + kNormEps), 1e-12);
    }
  }
  EXPECT_THROW(token_norm(k, KeyNorm::instance), ConfigError);
}

TEST(KeyNorm, Parse) {
  EXPECT_EQ(parse_key_norm("instance"), KeyNorm::instance);
  EXPECT_EQ(parse_key_norm("rmsnorm"), KeyNorm::rmsnorm);
  EXPECT_THROW(parse_key_norm("batchnorm"), ConfigError);
}

TEST(GradientExpansion, ExactTermIsShiftedGradient) {
  Rng rng(56);
  const InnerModel m = InnerModel::random(InnerVariant::two_layer, 4, rng, 0.5);
  const Tensor k = Tensor::randn({1, 4}, rng), v = Tensor::randn({1, 4}, rng), delta = Tensor::randn({1, 4}, rng, 0.1);
  const auto g = shifted_gradient_expansion(m, k, v, delta);
  const auto expect = two_layer_analytic_grad(m, add(k, delta), v, InnerLoss::inner_product).w1;
  EXPECT_LT(relative_error(g.exact_shifted, expect), 1e-12);
  EXPECT_LT(relative_error(g.order0, two_layer_analytic_grad(m, k, v, InnerLoss::inner_product).w1), 1e-12);
}

TEST(GradientExpansion, ZeroShiftHasNoHigherTerms) {
  Rng rng(57);
  const InnerModel m = InnerModel::random(InnerVariant::two_layer, 3, rng, 0.5);
  const Tensor k = Tensor::randn({1, 3}, rng), v = Tensor::randn({1, 3}, rng);
  const auto g = shifted_gradient_expansion(m, k, v, Tensor::zeros({1, 3}));
  EXPECT_EQ(frobenius_norm(g.order1a), 0.0);
  EXPECT_EQ(frobenius_norm(g.order1b), 0.0);
  EXPECT_EQ(frobenius_norm(g.order2), 0.0);
  EXPECT_LT(g.truncation_residual, 1e-15);
}

TEST(GradientExpansion, ResidualIsSecondOrder) {
  Rng rng(58);
  for (int t = 0; t < 20; ++t) {
    const InnerModel m = InnerModel::random(InnerVariant::two_layer, 4, rng, 0.5);
    const Tensor k = Tensor::randn({1, 4}, rng), v = Tensor::randn({1, 4}, rng);
    Tensor delta = Tensor::randn({1, 4}, rng);
    delta = scale(delta, 1e-2 / frobenius_norm(delta));
    const double r1 = shifted_gradient_expansion(m, k, v, delta).truncation_residual;
    const double r2 = shifted_gradient_expansion(m, k, v, scale(delta, 0.5)).truncation_residual;
    EXPECT_GE(r2 / r1, 0.18);
    EXPECT_LE(r2 / r1, 0.35);
  }
}

TEST(GradientExpansion, RejectsOtherVariantsAndShapes) {
  Rng rng(59);
  const InnerModel lin = InnerModel::random(InnerVariant::linear, 3, rng);
  const Tensor r = Tensor::randn({1, 3}, rng);
  EXPECT_THROW(shifted_gradient_expansion(lin, r, r, r), ConfigError);
  const InnerModel m = InnerModel::random(InnerVariant::two_layer, 3, rng);
  EXPECT_THROW(shifted_gradient_expansion(m, Tensor::zeros({2, 3}), r, r), DimensionError);
}
