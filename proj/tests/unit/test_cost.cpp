// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "ttc/cost.hpp"
#include "ttc/error.hpp"

using namespace ttc;

namespace {

double gflops(const std::string& arch) {
  return flops_model(ModelConfig::deit_tiny(), ArchSpec::parse(arch)).flops / 1e9;
}

}  // namespace

TEST(Flops, DeitTinyTargets) {
  EXPECT_NEAR(gflops("softmax"), 1.25, 1.25 * 0.05);
  EXPECT_NEAR(gflops("linear"), 1.13, 1.13 * 0.05);
  EXPECT_NEAR(gflops("ttt_swiglu+dwc"), 1.34, 1.34 * 0.05);
}

TEST(Flops, DenseTermsMatchHandCount) {
  const ModelConfig c = ModelConfig::deit_tiny();
  // 196 tokens, D = 192: four projections and an MLP of ratio 4.
  const double dense = 196.0 * 192 * 192 * 12;
  EXPECT_DOUBLE_EQ(block_flops(c, ArchSpec{}, 196) - mixer_flops(c, ArchSpec{}, 196), dense);
  EXPECT_DOUBLE_EQ(mixer_flops(c, ArchSpec{}, 196), 2.0 * 196 * 196 * 192);
  const double patch = 196.0 * 768 * 192, head = 192.0 * 1000;
  EXPECT_DOUBLE_EQ(flops_model(c, ArchSpec{}).flops, patch + 12 * (dense + 2.0 * 196 * 196 * 192) + head);
}

TEST(Flops, AdditiveOverDepth) {
  ModelConfig a = ModelConfig::deit_tiny(), b = a;
  b.depth = 24;
  const auto arch = ArchSpec::parse("ttt_two_layer");
  const double per_block = block_flops(a, arch, a.tokens());
  EXPECT_NEAR(flops_model(b, arch).flops - flops_model(a, arch).flops, 12 * per_block, 1.0);
}

TEST(Flops, MixerScaling) {
  const ModelConfig c = ModelConfig::deit_tiny();
  for (const std::string label : {"ttt_two_layer", "ttt_swiglu", "linear", "ttt_linear+dwc"}) {
    const auto arch = ArchSpec::parse(label);
    EXPECT_NEAR(mixer_flops(c, arch, 4 * 196) / mixer_flops(c, arch, 196), 4.0, 1e-12) << label;
  }
  EXPECT_NEAR(mixer_flops(c, ArchSpec{}, 4 * 196) / mixer_flops(c, ArchSpec{}, 196), 16.0, 1e-12);
}

TEST(Flops, MonotoneInResolutionAndLocality) {
  const ModelConfig c = ModelConfig::deit_tiny();
  double prev = 0.0;
  for (std::size_t r : {224, 448, 896}) {
    const double f = flops_model(c, ArchSpec::parse("ttt_two_layer"), r).flops;
    EXPECT_GT(f, prev);
    prev = f;
  }
  EXPECT_GT(gflops("ttt_swiglu+dwc+nat5"), gflops("ttt_swiglu+dwc+nat3"));
  EXPECT_GT(gflops("ttt_swiglu+dwc+nat3"), gflops("ttt_swiglu+dwc"));
  EXPECT_GT(gflops("ttt_swiglu+dwc"), gflops("ttt_swiglu"));
}

TEST(Flops, SoftmaxOvertakesTttAtHighResolution) {
  const ModelConfig c = ModelConfig::deit_tiny();
  const auto s = ArchSpec{}, t = ArchSpec::parse("ttt_two_layer");
  EXPECT_LT(flops_model(c, t, 224).flops, flops_model(c, s, 224).flops * 1.1);
  EXPECT_LT(flops_model(c, t, 1792).flops, 0.5 * flops_model(c, s, 1792).flops);
}

TEST(Flops, ReportCarriesParams) {
  const auto r = flops_model(ModelConfig::deit_tiny(), ArchSpec::parse("ttt_swiglu+dwc"));
  EXPECT_EQ(r.params, 6200872u);
  EXPECT_EQ(r.tokens, 196u);
  EXPECT_EQ(r.arch, "ttt_swiglu+dwc");
}

TEST(Flops, InvalidResolution) {
  EXPECT_THROW(flops_model(ModelConfig::deit_tiny(), ArchSpec{}, 100), ConfigError);
}
