#include <gtest/gtest.h>

#include <cmath>

#include "capsdbn/capsnet.hpp"
#include "support.hpp"

namespace capsdbn {
namespace {

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

TEST(Squash, ZeroAndUnitNorm) {
  const std::vector<double> z(4, 0.0);
  EXPECT_EQ(squash<double>(z), z);
  const std::vector<double> s{0.6, 0.8};
  const std::vector<double> v = squash<double>(s);
  EXPECT_NEAR(norm(v), 0.5, 1e-15);
  EXPECT_NEAR(v[0] / v[1], 0.75, 1e-15);
}

TEST(Squash, ScalarOracle) {
  RandomStream rs(1);
  std::vector<double> s(8);
  for (double& x : s) x = rs.normal();
  double n2 = 0;
  for (double x : s) n2 += x * x;
  const std::vector<double> v = squash<double>(s);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(v[i], n2 / (1 + n2) * s[i] / std::sqrt(n2), 1e-7);
}

TEST(Squash, BackwardMatchesFiniteDifferences) {
  RandomStream rs(2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> s({5});
    std::vector<double> g(5);
    for (double& x : s.data()) x = rs.normal(0.0, 1.5);
    for (double& x : g) x = rs.normal();
    std::vector<double> analytic(5, 0.0);
    squash_backward<double>(s.data(), g, analytic);
    const Tensor<double> numeric = finite_diff_grad(
        [&](const Tensor<double>& t) {
          const std::vector<double> v = squash<double>(t.data());
          return dot<double>(v, g);
        },
        s, 1e-6);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(analytic[i], numeric[i], 1e-8);
  }
}

TEST(Routing, SingleParentTakesFullCoupling) {
  RandomStream rs(3);
  Tensor<double> u({4, 1, 3});
  for (double& x : u.data()) x = rs.normal();
  std::vector<double> total(3, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t q = 0; q < 3; ++q) total[q] += u(i, 0, q);
  const std::vector<double> expected = squash<double>(total);
  for (std::size_t r : {1u, 3u}) {
    const RoutingState<double> st = route(u, r);
    for (double c : st.couplings.data()) EXPECT_EQ(c, 1.0);
    for (std::size_t q = 0; q < 3; ++q) EXPECT_NEAR(st.outputs(0, q), expected[q], 1e-12);
  }
}

TEST(Routing, IdenticalPredictionsAreAFixedPoint) {
  // n children all predicting p for each of K parents: s_j = (n/K) p.
  const std::vector<double> p{0.3, -0.2, 0.5};
  for (std::size_t n : {3u, 7u}) {
    Tensor<double> u({n, 3, 3});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t q = 0; q < 3; ++q) u(i, j, q) = p[q];
    std::vector<double> scaled(p);
    for (double& x : scaled) x *= static_cast<double>(n) / 3.0;
    const std::vector<double> expected = squash<double>(scaled);
    if (n == 3) EXPECT_EQ(expected, squash<double>(p));
    for (std::size_t r : {1u, 2u, 5u}) {
      const RoutingState<double> st = route(u, r);
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t q = 0; q < 3; ++q) EXPECT_NEAR(st.outputs(j, q), expected[q], 1e-12);
    }
  }
}

TEST(Routing, HandTraceTwoChildrenTwoParents) {
  const Tensor<double> u({2, 2, 2}, {1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -1.0, 0.5});
  const RoutingTrace<double> trace = route_trace(u, 2);
  ASSERT_EQ(trace.size(), 2u);
  const std::vector<double> s0{0.75, 0.25, -0.5, 0.75};
  const std::vector<double> v0{0.3648781915578899, 0.12162606385262997, -0.24865870865268894, 0.3729880629790334};
  const std::vector<double> b1{0.3648781915578899, 0.3729880629790334, 0.24325212770525995, 0.4351527401422056};
  const std::vector<double> c1{0.4979725432568569, 0.5020274567431432, 0.4521715338568563, 0.5478284661431436};
  const std::vector<double> s1{0.7240583101852851, 0.22608576692842816, -0.5478284661431436, 0.775941689814715};
  const std::vector<double> v1{0.34863028304935884, 0.1088591123241432, -0.27355197096183453, 0.3874577385411178};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(trace[0].couplings[i], 0.5, 1e-7);
    EXPECT_NEAR(trace[0].preactivations[i], s0[i], 1e-7);
    EXPECT_NEAR(trace[0].outputs[i], v0[i], 1e-7);
    EXPECT_NEAR(trace[1].logits[i], b1[i], 1e-7);
    EXPECT_NEAR(trace[1].couplings[i], c1[i], 1e-7);
    EXPECT_NEAR(trace[1].preactivations[i], s1[i], 1e-7);
    EXPECT_NEAR(trace[1].outputs[i], v1[i], 1e-7);
  }
}

TEST(Routing, CouplingRowsSumToOne) {
  RandomStream rs(4);
  Tensor<double> u({6, 4, 3});
  for (double& x : u.data()) x = rs.normal();
  for (const RoutingState<double>& st : route_trace(u, 5))
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < 4; ++j) total += st.couplings(i, j);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Routing, ZeroIterationsIsConfigError) {
  EXPECT_THROW(route(Tensor<double>({1, 1, 2}), 0), ConfigError);
}

TEST(Forward, ZeroParametersGiveZeroNorms) {
  const CapsNetSpec spec = testing::tiny_caps_spec();
  RandomStream rs(5);
  const ForwardResult<double> r =
      forward(testing::random_input(spec, rs), CapsNetParams<double>::zeros(spec), spec);
  for (double n : r.norms) EXPECT_EQ(n, 0.0);
}

TEST(Forward, NormsBoundedAndDeterministic) {
  const CapsNetSpec spec = testing::tiny_caps_spec();
  RandomStream a(6), b(6);
  const auto pa = init_params<float>(spec, a);
  const auto pb = init_params<float>(spec, b);
  Tensor<float> x({1, 8, 8});
  for (float& v : x.data()) v = static_cast<float>(a.uniform(-1, 1));
  const ForwardResult<float> ra = forward(x, pa, spec), rb = forward(x, pb, spec);
  EXPECT_EQ(ra.class_vectors, rb.class_vectors);
  for (float n : ra.norms) {
    EXPECT_GE(n, 0.0f);
    EXPECT_LT(n, 1.0f);
  }
}

TEST(Forward, ShapeMismatchIsConfigError) {
  const CapsNetSpec spec = testing::tiny_caps_spec();
  EXPECT_THROW(forward(Tensor<double>({1, 9, 9}), CapsNetParams<double>::zeros(spec), spec), ConfigError);
}

TEST(Spec, DefaultDerivedSizes) {
  const CapsNetSpec s;
  EXPECT_EQ(s.conv_height(), 28u);
  EXPECT_EQ(s.primary_height(), 12u);
  EXPECT_EQ(s.num_children(), 4u * 144u);
  EXPECT_EQ(CapsNetSpec::from_dims(s.to_dims()), s);
  CapsNetSpec bad = s;
  bad.primary_stride = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(MarginLoss, ClosedForms) {
  EXPECT_EQ(margin_loss<double>(std::vector<double>{0.95, 0.05, 0.05, 0.05, 0.05}, 0), 0.0);
  EXPECT_NEAR(margin_loss<double>(std::vector<double>(5, 0.0), 0), 0.81, 1e-15);
  EXPECT_THROW(margin_loss<double>(std::vector<double>(5, 0.0), 5), ConfigError);
}

TEST(MarginLoss, ScalarOracle) {
  RandomStream rs(7);
  std::vector<double> norms(5);
  for (double& n : norms) n = rs.uniform();
  const MarginLossCfg cfg{0.85, 0.15, 0.4};
  double expected = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    if (k == 2) expected += std::pow(std::max(0.0, 0.85 - norms[k]), 2);
    else expected += 0.4 * std::pow(std::max(0.0, norms[k] - 0.15), 2);
  }
  EXPECT_NEAR(margin_loss<double>(norms, 2, cfg), expected, 1e-7);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (Activation act : {Activation::relu, Activation::tanh}) {
    const CapsNetSpec spec = testing::tiny_caps_spec(act);
    RandomStream rs(11);
    CapsNetParams<double> params = init_params<double>(spec, rs);
    fill_normal(params.conv_bias, rs, 0.1);
    fill_normal(params.primary_bias, rs, 0.1);
    const testing::GradCheck g = testing::check_caps_gradient(spec, params, testing::random_input(spec, rs), 1);
    EXPECT_LT(g.max_rel_error, 1e-4) << activation_name(act);
    EXPECT_EQ(g.checked, 4u * 9 + 4 + 8 * 4 * 4 + 8 + 18u * 3 * 4 * 4);
  }
}

TEST(Backward, ZeroGradientInsideMargins) {
  // One parent per category with a prediction equal to a scaled basis vector.
  CapsNetSpec spec = testing::tiny_caps_spec();
  CapsNetParams<double> params = CapsNetParams<double>::zeros(spec);
  RandomStream rs(12);
  const Tensor<double> x = testing::random_input(spec, rs);
  for (double& b : params.primary_bias.data()) b = 1.0;  // capsules are constant (1,1,1,1) pre-squash
  for (std::size_t i = 0; i < spec.num_children(); ++i) params.weights(i, 0, 0, 0) = 10.0;
  const ForwardResult<double> r = forward(x, params, spec);
  ASSERT_GT(r.norms[0], 0.9);
  ASSERT_EQ(r.norms[1], 0.0);
  const CapsNetParams<double> g = gradient(r.cache, 0, params, spec);
  for (const Tensor<double>* t : g.tensors())
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, DeterministicAndRejectsStaleCache) {
  const CapsNetSpec spec = testing::tiny_caps_spec();
  RandomStream rs(13);
  CapsNetParams<double> params = init_params<double>(spec, rs);
  const Tensor<double> x = testing::random_input(spec, rs);
  const ForwardResult<double> r = forward(x, params, spec);
  const CapsNetParams<double> g1 = gradient(r.cache, 2, params, spec);
  const CapsNetParams<double> g2 = gradient(r.cache, 2, params, spec);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(*g1.tensors()[t], *g2.tensors()[t]);

  AdamOptimizer<double> adam(spec, AdamCfg{});
  adam.step(params, g1, 1.0);
  EXPECT_THROW(gradient(r.cache, 2, params, spec), UsageError);
}

TEST(Adam, ReducesLossOnASingleExample) {
  const CapsNetSpec spec = testing::tiny_caps_spec();
  RandomStream rs(14);
  CapsNetParams<double> params = init_params<double>(spec, rs);
  const Tensor<double> x = testing::random_input(spec, rs);
  AdamOptimizer<double> adam(spec, AdamCfg{0.01});
  const double before = margin_loss<double>(forward(x, params, spec).norms, 1);
  for (int step = 0; step < 50; ++step) {
    const ForwardResult<double> r = forward(x, params, spec);
    adam.step(params, gradient(r.cache, 1, params, spec), 1.0);
  }
  EXPECT_LT(margin_loss<double>(forward(x, params, spec).norms, 1), 0.5 * before);
}

TEST(Predict, ArgmaxWithLowestIdTieBreak) {
  const std::vector<double> n{0.1, 0.9, 0.2, 0.1, 0.1};
  EXPECT_EQ(predict<double>(n), 1u);
  EXPECT_EQ(predict<double>(std::vector<double>(5, 0.3)), 0u);
  std::vector<double> half = n;
  for (double& v : half) v *= 0.5;
  EXPECT_EQ(predict<double>(half), 1u);
}

}  // namespace
}  // namespace capsdbn
