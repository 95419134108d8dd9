// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ttc/error.hpp"
#include "ttc/tensor.hpp"

using namespace ttc;

TEST(Tensor, ShapeAndDataAgree) {
  Rng rng(1);
  const Tensor t = Tensor::randn({3, 4, 2}, rng);
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, F32StorageRoundsValues) {
  const Tensor t = Tensor::from({1, 2}, {0.1, 1.0 / 3.0}, DType::f32);
  EXPECT_EQ(t.dtype(), DType::f32);
  EXPECT_EQ(t(0, 0), static_cast<double>(0.1f));
  EXPECT_EQ(t(0, 1), static_cast<double>(1.0f / 3.0f));
}

TEST(Matmul, IdentityAndHandCase) {
  Rng rng(2);
  const Tensor x = Tensor::randn({3, 5}, rng);
  EXPECT_EQ(max_abs_diff(matmul(Tensor::identity(3), x), x), 0.0);
  const Tensor y = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{0}, {1}}));
  EXPECT_EQ(y(0, 0), 2.0);
  EXPECT_EQ(y(1, 0), 4.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Tensor a = Tensor::randn({5, 4}, rng), b = Tensor::randn({4, 3}, rng);
    EXPECT_LT(oracle::max_abs(matmul(a, b), oracle::matmul(oracle::to_mat(a), oracle::to_mat(b))), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, BackwardRule) {
  Rng rng(4);
  Tape tape;
  const Tensor a = tape.variable(Tensor::randn({3, 4}, rng));
  const Tensor b = tape.variable(Tensor::randn({4, 2}, rng));
  const Tensor g = Tensor::randn({3, 2}, rng);
  const auto grads = tape.grad(matmul(a, b), g, {a, b});
  const auto go = oracle::to_mat(g);
  EXPECT_LT(oracle::max_abs(grads[0], oracle::matmul(go, oracle::transpose(oracle::to_mat(b)))), 1e-12);
  EXPECT_LT(oracle::max_abs(grads[1], oracle::matmul(oracle::transpose(oracle::to_mat(a)), go)), 1e-12);
}

TEST(SoftmaxRows, RowsSumToOneAndShiftInvariant) {
  Rng rng(5);
  const Tensor x = Tensor::randn({4, 6}, rng);
  const Tensor s = softmax_rows(x, 0.8);
  for (std::size_t i = 0; i < 4; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_GT(s(i, j), 0.0);
      r += s(i, j);
    }
    EXPECT_NEAR(r, 1.0, 1e-14);
  }
  const Tensor shifted = add(x, broadcast_cols(Tensor::randn({4, 1}, rng, 10.0), 6));
  EXPECT_LT(max_abs_diff(softmax_rows(shifted, 0.8), s), 1e-12);
}

TEST(SoftmaxRows, LargeInputsStayFinite) {
  const Tensor s = softmax_rows(Tensor::matrix({{1000.0, 999.0, -1000.0}}));
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(SoftmaxRows, MaskZeroesEntriesAndEmptyRowThrows) {
  auto mask = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0});
  const Tensor s = softmax_rows(Tensor::matrix({{0.3, 5.0, -0.2}, {1.0, 2.0, 3.0}}), 1.0, mask);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_EQ(s(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(s(1, 1), 1.0);
  auto empty = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 1, 0, 0});
  EXPECT_THROW(softmax_rows(Tensor::zeros({2, 2}), 1.0, empty), DimensionError);
}

TEST(Activation, ClosedForms) {
  for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    EXPECT_NEAR(activation_value(ActivationKind::silu, x), oracle::silu(x), 1e-15);
    EXPECT_NEAR(activation_value(ActivationKind::elu_plus_one, x), oracle::elu1(x), 1e-15);
    EXPECT_NEAR(activation_value(ActivationKind::gelu, x), 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))), 1e-15);
  }
  EXPECT_EQ(activation_value(ActivationKind::silu, 0.0), 0.0);
  EXPECT_EQ(activation_value(ActivationKind::elu_plus_one, 0.0), 1.0);
}

TEST(Activation, DerivativesMatchCentralDifferences) {
  const double h = 1e-5;
  for (auto kind : {ActivationKind::silu, ActivationKind::gelu, ActivationKind::elu_plus_one}) {
    for (int order = 1; order <= 3; ++order) {
      for (double x : {-2.0, -0.3, 0.4, 1.9}) {
        const double fd = (activation_value(kind, x + h, order - 1) - activation_value(kind, x - h, order - 1)) / (2 * h);
        EXPECT_NEAR(activation_value(kind, x, order), fd, 1e-8) << to_string(kind) << " order " << order << " x " << x;
      }
    }
  }
  EXPECT_THROW(activation_value(ActivationKind::silu, 0.0, 4), ConfigError);
}

TEST(DepthwiseConv, MatchesSlidingWindow) {
  Rng rng(6);
  for (std::size_t k : {1u, 3u, 5u}) {
    const Tensor x = Tensor::randn({4, 5, 3}, rng), w = Tensor::randn({k, k, 3}, rng);
    const auto expect = oracle::dwconv(x.to_vector(), 4, 5, 3, w.to_vector(), k);
    const auto got = depthwise_conv2d(x, w).to_vector();
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
  }
}

TEST(DepthwiseConv, CenterTapIsIdentityAndEvenKernelThrows) {
  Rng rng(7);
  const Tensor x = Tensor::randn({3, 3, 2}, rng);
  std::vector<double> k(18, 0.0);
  k[(1 * 3 + 1) * 2 + 0] = 1.0;
  k[(1 * 3 + 1) * 2 + 1] = 1.0;
  EXPECT_EQ(max_abs_diff(depthwise_conv2d(x, Tensor::from({3, 3, 2}, k)), x), 0.0);
  EXPECT_THROW(depthwise_conv2d(x, Tensor::zeros({2, 2, 2})), Error);
  EXPECT_THROW(depthwise_conv2d(x, Tensor::zeros({3, 3, 4})), DimensionError);
}

TEST(DepthwiseConv, KernelGradientEqualsTape) {
  Rng rng(8);
  const Tensor x = Tensor::randn({4, 3, 2}, rng), g = Tensor::randn({4, 3, 2}, rng);
  Tape tape;
  const Tensor w = tape.variable(Tensor::randn({3, 3, 2}, rng));
  const auto grads = tape.grad(depthwise_conv2d(x, w), g, {w});
  EXPECT_LT(max_abs_diff(grads[0], dwconv_weight_grad(x, g, 3)), 1e-12);
  EXPECT_EQ(max_abs_diff(flip_kernel(flip_kernel(w.detach())), w.detach()), 0.0);
}

TEST(FiniteDiff, ExactOnQuadratic) {
  Rng rng(9);
  const Tensor x = Tensor::randn({2, 3}, rng);
  const Tensor g = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        return s;
      },
      x);
  EXPECT_LT(max_abs_diff(g, scale(x, 2.0)), 1e-9);
}

TEST(Tape, BackwardPopulatesLeavesOnceOnly) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::matrix({{1.0, 2.0}}));
  const Tensor y = tape.variable(Tensor::matrix({{3.0, -1.0}}));
  tape.backward(sum(mul(x, y)));
  EXPECT_EQ(max_abs_diff(x.grad(), Tensor::matrix({{3.0, -1.0}})), 0.0);
  EXPECT_EQ(max_abs_diff(y.grad(), Tensor::matrix({{1.0, 2.0}})), 0.0);
  EXPECT_EQ(x.grad().shape(), x.shape());
  EXPECT_THROW(tape.backward(sum(mul(x, y))), ConfigError);
}

TEST(Tape, SharedSubexpressionAccumulates) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::matrix({{1.5}}));
  const Tensor y = mul(x, x);
  const auto g = tape.grad(sum(add(y, y)), {x});
  EXPECT_DOUBLE_EQ(g[0].item(), 6.0);
}

TEST(Tape, DoubleBackward) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::matrix({{0.7, -1.2}}));
  const Tensor y = sum(mul(mul(x, x), x));
  const auto g1 = tape.grad(y, {x}, true);
  const auto g2 = tape.grad(sum(g1[0]), {x});
  EXPECT_NEAR(g2[0](0, 0), 6 * 0.7, 1e-12);
  EXPECT_NEAR(g2[0](0, 1), 6 * -1.2, 1e-12);
}

TEST(Tape, UnreachableInputGetsZeroGradient) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::matrix({{1.0}}));
  const Tensor z = tape.variable(Tensor::matrix({{2.0, 3.0}}));
  const auto g = tape.grad(sum(x), {z});
  EXPECT_EQ(max_abs_diff(g[0], Tensor::zeros({1, 2})), 0.0);
}

TEST(Tape, NoRecordGuardStopsRecording) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::matrix({{1.0}}));
  {
    NoRecordGuard guard(tape);
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Ops, ShapeChecks) {
  EXPECT_THROW(add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(slice_cols(Tensor::zeros({2, 2}), 1, 2), DimensionError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4, 2}), DimensionError);
}
