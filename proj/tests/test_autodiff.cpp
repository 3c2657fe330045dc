#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>

#include "wtpose/autodiff.hpp"
#include "wtpose/gradcheck.hpp"
#include "wtpose/layers.hpp"
#include "wtpose/suites.hpp"

using namespace wtpose;
using TD = Tensor<double>;

TEST(Backward, SumGivesOnes) {
  Rng rng(1);
  const TD x = random_normal<double>({2, 3, 4}, rng);
  Graph<double> g;
  const NodeId xi = g.variable(x);
  g.backward(ad::sum(g, xi));
  for (double v : g.grad(xi)) EXPECT_EQ(v, 1.0);
}

TEST(Backward, HalfSumSquaresGivesInput) {
  Rng rng(2);
  const TD x = random_normal<double>({5, 2}, rng);
  Graph<double> g;
  g.backward(ad::half_sum_squares(g, g.parameter(x)));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.grad()[i], x[i]);
}

TEST(Backward, FanOutAccumulates) {
  const TD x({1, 2, 1, 1}, {1.5, -2.0});
  Graph<double> g;
  const NodeId xi = g.parameter(x);
  const NodeId y = ad::add(g, xi, xi);
  g.backward(ad::sum(g, ad::add(g, y, xi)));
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_EQ(x.grad()[1], 3.0);
}

TEST(Backward, GradientsAddAcrossCalls) {
  const TD x({3}, 2.0);
  for (int rep = 0; rep < 2; ++rep) {
    Graph<double> g;
    g.backward(ad::sum(g, g.parameter(x)));
  }
  for (double v : x.grad()) EXPECT_EQ(v, 2.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Graph<double> g;
  const NodeId x = g.variable(TD({2, 2}, 1.0));
  EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Graph, NonFiniteValueIsRejected) {
  Graph<double> g;
  const NodeId x = g.variable(TD({1, 1, 1, 2}, {std::numeric_limits<double>::infinity(), 0.0}));
  try {
    ad::gelu(g, x);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("gelu"), std::string::npos);
  }
}

TEST(Graph, InputsPrecedeConsumers) {
  Rng rng(3);
  Graph<double> g;
  const NodeId x = g.variable(random_normal<double>({1, 2, 3, 3}, rng));
  const NodeId w = g.variable(random_normal<double>({2, 2, 3, 3}, rng));
  const NodeId b = g.variable(TD({2}));
  ad::sum(g, ad::gelu(g, ad::conv2d(g, x, w, b, 1, 1)));
  for (NodeId i = 0; i < g.size(); ++i)
    for (NodeId in : g.node(i).inputs) EXPECT_LT(in, i);
}

TEST(Graph, DisabledGraphRecordsNoGradient) {
  const TD x({4}, 1.0);
  Graph<double> g(false);
  const NodeId s = ad::sum(g, g.parameter(x));
  EXPECT_FALSE(g.requires_grad(s));
  g.backward(s);
  EXPECT_FALSE(x.has_grad());
}

TEST(FiniteDiff, ExactForLinearFunction) {
  Rng rng(4);
  const TD x = random_normal<double>({3, 4}, rng);
  EXPECT_LT(finite_diff_check([](Graph<double>& g, NodeId n) { return ad::sum(g, n); }, x), 1e-10);
}

TEST(FiniteDiff, SoftmaxSquares) {
  Rng rng(5);
  const TD x = random_normal<double>({3, 6}, rng);
  const double err = finite_diff_check(
      [](Graph<double>& g, NodeId n) { return ad::half_sum_squares(g, ad::softmax_lastdim(g, n)); }, x);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiff, DetectsAWrongGradient) {
  // x*x with the true gradient replaced by zero must be flagged
  const TD x({3}, {0.7, -1.2, 2.0});
  auto broken = [](Graph<double>& g, NodeId n) {
    Tensor<double> v = g.value(n);
    double s = 0;
    for (double e : v.values()) s += e * e;
    return g.record("broken", {n}, TD({1}, {s}), [](Graph<double>&, NodeId) {});
  };
  EXPECT_GE(finite_diff_check(broken, x), 1.0);
}

TEST(FiniteDiff, MultiTensorReportAndRestore) {
  Rng rng(6);
  TD x = random_normal<double>({1, 3, 4, 4}, rng);
  TD w = random_normal<double>({2, 3, 3, 3}, rng);
  TD b = random_normal<double>({2}, rng);
  const TD x0 = x, w0 = w;
  std::array<Tensor<double>*, 3> wrt{&x, &w, &b};
  const GradCheckReport r = finite_diff_check(
      [&](Graph<double>& g) {
        return ad::half_sum_squares(g, ad::conv2d(g, g.parameter(x), g.parameter(w), g.parameter(b), 1, 1));
      },
      wrt);
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coords_checked, x.numel() + w.numel() + b.numel());
  EXPECT_EQ(x, x0);
  EXPECT_EQ(w, w0);
}

TEST(GradSuite, PrimitiveScopePasses) {
  const auto results = run_gradcheck_suite(GradScope::primitive);
  EXPECT_GE(results.size(), 13u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.pass()) << r.component << " " << r.max_error;
    EXPECT_LE(r.threshold, 1e-6) << r.component;
  }
}

TEST(GradSuite, ScopeNames) {
  EXPECT_EQ(parse_grad_scope("primitive"), GradScope::primitive);
  EXPECT_EQ(parse_grad_scope("full"), GradScope::full);
  EXPECT_FALSE(parse_grad_scope("everything").has_value());
}
