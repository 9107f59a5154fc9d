#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "capsdbn/numerics.hpp"

namespace capsdbn {
namespace {

Tensor<double> random_tensor(Shape shape, RandomStream& rs) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data()) v = rs.uniform(-1.0, 1.0);
  return t;
}

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  t(1, 2, 3) = 5.0f;
  EXPECT_EQ(t[23], 5.0f);
  EXPECT_EQ(t.slice(1).size(), 12u);
  EXPECT_THROW(Tensor<float>({2, 0}), ConfigError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ConfigError);
}

TEST(Conv2dValid, IdentityKernel) {
  RandomStream rs(1);
  const Tensor<double> x = random_tensor({1, 5, 7}, rs);
  const Tensor<double> k({1, 1, 1, 1}, 1.0);
  EXPECT_EQ(conv2d_valid(x, k), x);
}

TEST(Conv2dValid, WindowSumExample) {
  const Tensor<double> x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor<double> k({1, 1, 2, 2}, 1.0);
  const Tensor<double> y = conv2d_valid(x, k);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(y.storage(), (std::vector<double>{12, 16, 24, 28}));
}

TEST(Conv2dValid, OutputExtentIsVisibleMinusFilterPlusOne) {
  const Tensor<float> x({1, 12, 12});
  const Tensor<float> k({3, 1, 5, 5});
  EXPECT_EQ(conv2d_valid(x, k).shape(), (Shape{3, 8, 8}));
}

TEST(Conv2dValid, MatchesDirectLoopWithBiasAndStride) {
  RandomStream rs(7);
  const Tensor<double> x = random_tensor({2, 9, 9}, rs);
  const Tensor<double> k = random_tensor({3, 2, 3, 3}, rs);
  const std::vector<double> bias{0.5, -1.0, 2.0};
  const Tensor<double> y = conv2d_valid(x, k, std::span<const double>(bias), 2);
  ASSERT_EQ(y.shape(), (Shape{3, 4, 4}));
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t oy = 0; oy < 4; ++oy)
      for (std::size_t ox = 0; ox < 4; ++ox) {
        double ref = bias[g];
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) ref += x(c, oy * 2 + i, ox * 2 + j) * k(g, c, i, j);
        EXPECT_NEAR(y(g, oy, ox), ref, 1e-12);
      }
}

TEST(Conv2dValid, RejectsBadShapes) {
  EXPECT_THROW(conv2d_valid(Tensor<float>({1, 3, 3}), Tensor<float>({1, 1, 4, 4})), ConfigError);
  EXPECT_THROW(conv2d_valid(Tensor<float>({2, 5, 5}), Tensor<float>({1, 1, 3, 3})), ConfigError);
}

TEST(Conv2dValid, NonFiniteResultIsNumericError) {
  Tensor<float> x({1, 2, 2}, 1.0f);
  x[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(conv2d_valid(x, Tensor<float>({1, 1, 1, 1}, 1.0f)), NumericError);
}

TEST(Conv2dFull, IdentityAndZeroKernels) {
  RandomStream rs(3);
  const Tensor<double> x = random_tensor({1, 4, 6}, rs);
  EXPECT_EQ(conv2d_full(x, Tensor<double>({1, 1, 1, 1}, 1.0)), x);
  const Tensor<double> z = conv2d_full(x, Tensor<double>({1, 2, 3, 3}));
  EXPECT_EQ(z.shape(), (Shape{2, 6, 8}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

// <conv_valid(x, K), y> == <x, conv_full(y, K)>
TEST(Conv2dFull, AdjointIdentity) {
  RandomStream rs(11);
  for (std::size_t stride : {1u, 2u}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor<double> x = random_tensor({2, 7, 7}, rs);
      const Tensor<double> k = random_tensor({3, 2, 3, 3}, rs);
      const Tensor<double> cx = conv2d_valid(x, k, {}, stride);
      const Tensor<double> y = random_tensor(cx.shape(), rs);
      const double lhs = dot(cx, y);
      const double rhs = dot(x, conv2d_full(y, k, stride));
      EXPECT_NEAR(lhs, rhs, 1e-5 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST(Conv2dFull, AdjointIdentityFloatStorage) {
  RandomStream rs(5);
  Tensor<float> x({1, 6, 6}), k({1, 1, 3, 3});
  for (float& v : x.data()) v = static_cast<float>(rs.uniform(-1, 1));
  for (float& v : k.data()) v = static_cast<float>(rs.uniform(-1, 1));
  Tensor<float> y({1, 4, 4});
  for (float& v : y.data()) v = static_cast<float>(rs.uniform(-1, 1));
  const double lhs = dot(conv2d_valid(x, k), y);
  const double rhs = dot(x, conv2d_full(y, k));
  EXPECT_NEAR(lhs, rhs, 1e-5 * std::max(1.0, std::abs(lhs)));
}

TEST(Conv2dKernelGrad, MatchesFiniteDifferences) {
  RandomStream rs(13);
  const Tensor<double> x = random_tensor({2, 6, 6}, rs);
  const Tensor<double> k = random_tensor({2, 2, 3, 3}, rs);
  const Tensor<double> go = random_tensor({2, 2, 2}, rs);
  const Tensor<double> analytic = conv2d_kernel_grad(x, go, 3, 2);
  const Tensor<double> numeric = finite_diff_grad(
      [&](const Tensor<double>& kk) { return dot(conv2d_valid(x, kk, {}, 2), go); }, k, 1e-5);
  for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(analytic[i], numeric[i], 1e-8);
}

TEST(Activations, SigmoidAndSoftmax) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  const Tensor<double> s = sigmoid(Tensor<double>({3}, {-800.0, 0.0, 800.0}));
  EXPECT_GT(s[0], 0.0 - 1e-300);
  EXPECT_LT(s[2], 1.0 + 1e-15);

  const std::vector<double> flat = softmax<double>(std::vector<double>(7, 3.25));
  for (double v : flat) EXPECT_DOUBLE_EQ(v, 1.0 / 7.0);

  const std::vector<double> p = softmax<double>(std::vector<double>{1, 2, 3});
  EXPECT_NEAR(p[0], 0.09003, 1e-5);
  EXPECT_NEAR(p[1], 0.24473, 1e-5);
  EXPECT_NEAR(p[2], 0.66524, 1e-5);
}

TEST(Activations, SoftmaxAlongAxisSumsToOneAndIsShiftInvariant) {
  RandomStream rs(17);
  Tensor<double> x = random_tensor({3, 4, 5}, rs);
  for (double& v : x.data()) v *= 10;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor<double> p = softmax(x, axis);
    Tensor<double> shifted = x;
    for (double& v : shifted.data()) v += 123.0;
    const Tensor<double> q = softmax(shifted, axis);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-6);
  }
  const Tensor<double> p = softmax(x, 1);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 5; ++c) {
      double total = 0;
      for (std::size_t b = 0; b < 4; ++b) total += p(a, b, c);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(FiniteDiff, SumAndHalfSquaredNorm) {
  RandomStream rs(19);
  const Tensor<double> x = random_tensor({4, 3}, rs);
  const Tensor<double> g1 = finite_diff_grad([](const Tensor<double>& t) { return sum(t.data()); }, x, 1e-4);
  for (double v : g1.data()) EXPECT_NEAR(v, 1.0, 1e-9);
  const Tensor<double> g2 = finite_diff_grad([](const Tensor<double>& t) { return 0.5 * dot(t, t); }, x, 1e-4);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g2[i], x[i], 1e-6);
  EXPECT_THROW(finite_diff_grad([](const Tensor<double>&) { return std::nan(""); }, x, 1e-4), NumericError);
}

TEST(RandomStream, EqualSeedsGiveEqualDraws) {
  RandomStream a(2024), b(2024), c(2025);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next_u64();
    ASSERT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(RandomStream, UniformMomentsAndBounds) {
  RandomStream rs(99);
  double mean = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rs.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += u;
  }
  EXPECT_NEAR(mean / 100000, 0.5, 0.01);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rs.below(7), 7u);
}

TEST(RandomStream, ForkIsIndependentOfParentPosition) {
  RandomStream a(5);
  const auto f1 = a.fork("x").next_u64();
  a.next_u64();
  EXPECT_EQ(a.fork("x").next_u64(), f1);
  EXPECT_NE(a.fork("y").next_u64(), f1);
}

}  // namespace
}  // namespace capsdbn
