#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "textlens/nn/adam.hpp"
#include "textlens/nn/autograd.hpp"

using namespace textlens;
using namespace textlens::nn;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& gen) {
  std::normal_distribution<double> n01;
  Tensor t({r, c});
  for (double& x : t.values()) x = n01(gen);
  return t;
}

// Gradient of a scalar graph built by `f` w.r.t. each parameter, checked by
// central differences.
template <typename F>
double check_op(std::vector<Parameter*> params, F f) {
  {
    Graph g;
    for (auto* p : params) p->grad = Tensor(p->value.shape());
    Var loss = f(g);
    g.backward(loss);
  }
  double worst = 0.0;
  for (auto* p : params) {
    std::vector<double> x(p->value.values().begin(), p->value.values().end());
    auto fx = [&] {
      std::copy(x.begin(), x.end(), p->value.values().begin());
      Graph g;
      return f(g).value().item();
    };
    const auto num = oracle::central_diff(x, fx);
    std::copy(x.begin(), x.end(), p->value.values().begin());
    worst = std::max(worst, oracle::rel_error(std::vector<double>(p->grad.values().begin(), p->grad.values().end()), num));
  }
  return worst;
}

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t.row_span(1)[0], 4.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, ScalarItemAndFinite) {
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  Tensor t({1, 2});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Ops, AffineMatchesHandComputation) {
  Graph g;
  Var x = g.constant(Tensor::matrix({{1, 2}}));
  Var W = g.constant(Tensor::matrix({{1, 0, -1}, {2, 1, 0}}));
  Var b = g.constant(Tensor::row({0.5, 0.5, 0.5}));
  const Tensor& y = affine(x, W, b).value();
  EXPECT_DOUBLE_EQ(y[0], 5.5);
  EXPECT_DOUBLE_EQ(y[1], 2.5);
  EXPECT_DOUBLE_EQ(y[2], -0.5);
}

TEST(Ops, AffineRejectsMismatchedShapes) {
  Graph g;
  Var x = g.constant(Tensor({1, 3}));
  Var W = g.constant(Tensor({2, 2}));
  Var b = g.constant(Tensor({1, 2}));
  EXPECT_THROW(affine(x, W, b), DimensionError);
}

TEST(Ops, AffineOnEmptyBatchGivesEmptyOutput) {
  Graph g;
  Var y = affine(g.constant(Tensor({0, 3})), g.constant(Tensor({3, 2}, 1.0)), g.constant(Tensor({1, 2})));
  EXPECT_EQ(y.value().rows(), 0u);
  EXPECT_EQ(y.value().cols(), 2u);
}

TEST(Ops, SegmentSumHandlesEmptySegments) {
  Graph g;
  Var rows = g.constant(Tensor::matrix({{1, 1}, {2, 3}, {5, 8}}));
  const Tensor& y = segment_sum(rows, {0, 2, 2, 3}).value();
  ASSERT_EQ(y.rows(), 3u);
  EXPECT_EQ(y(0, 0), 3.0);
  EXPECT_EQ(y(0, 1), 4.0);
  EXPECT_EQ(y(1, 0), 0.0);
  EXPECT_EQ(y(2, 1), 8.0);
}

TEST(Ops, GaussianKlKnownValues) {
  Graph g;
  EXPECT_NEAR(gaussian_kl(g.constant(Tensor::row({1.0})), g.constant(Tensor::row({0.0}))).value().item(), 0.5, 1e-12);
  Graph h;
  const double lv = std::log(4.0);
  EXPECT_NEAR(gaussian_kl(h.constant(Tensor::row({0.0})), h.constant(Tensor::row({lv}))).value().item(),
              0.5 * (4.0 - 1.0 - lv), 1e-12);
  EXPECT_NEAR(0.5 * (4.0 - 1.0 - lv), 0.80685, 1e-5);
}

TEST(Ops, GaussianKlIsZeroAtThePrior) {
  Graph g;
  EXPECT_EQ(gaussian_kl(g.constant(Tensor({3, 4})), g.constant(Tensor({3, 4}))).value().item(), 0.0);
}

TEST(Ops, BernoulliNllKnownValue) {
  Graph g;
  EXPECT_NEAR(bernoulli_nll(g.constant(Tensor::row({0.1})), {0}).value().item(), -std::log(0.9), 1e-12);
  Graph h;
  EXPECT_NEAR(bernoulli_nll(h.constant(Tensor::row({0.9})), {0}).value().item(), -std::log(0.1), 1e-12);
  EXPECT_NEAR(-std::log(0.1), 2.302585, 1e-6);
}

TEST(Ops, BernoulliNllStaysFiniteAtTheEdges) {
  Graph g;
  const double v = bernoulli_nll(g.constant(Tensor::row({0.0, 1.0})), {1, 0}).value().item();
  EXPECT_TRUE(std::isfinite(v));
}

TEST(Ops, BernoulliNllRejectsNonBinaryLabels) {
  Graph g;
  EXPECT_THROW(bernoulli_nll(g.constant(Tensor::row({0.5})), {2}), UsageError);
}

TEST(Ops, ClampPassesNoGradientOutsideRange) {
  Parameter p("x", Tensor::row({-20.0, 0.5, 20.0}));
  Graph g;
  Var y = sum(clamp(g.param(p), -10.0, 10.0));
  p.grad = Tensor(p.value.shape());
  g.backward(y);
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_EQ(p.grad[1], 1.0);
  EXPECT_EQ(p.grad[2], 0.0);
}

TEST(OpsGradients, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  Parameter x("x", random_tensor(4, 3, gen));
  Parameter W("W", random_tensor(3, 5, gen));
  Parameter b("b", random_tensor(1, 5, gen));
  Parameter lv("lv", random_tensor(2, 5, gen));
  const Tensor eps = random_tensor(2, 5, gen);
  auto f = [&](Graph& g) {
    Var h = affine(g.param(x), g.param(W), g.param(b));
    Var t = activation(h, Activation::kTanh);
    Var pooled = segment_sum(t, {0, 1, 4});
    Var mu = add(pooled, scale(gather_rows(t, {3, 0}), 0.5));
    Var logv = clamp(g.param(lv), -1.0, 1.0);
    Var z = reparam_sample(mu, logv, eps);
    Var cat = concat(z, mu);
    Var p = sigmoid(mul(cat, cat));
    return add(bernoulli_nll(p, {1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1}),
               add(gaussian_kl(mu, logv, {0.3, 0.7}), sum(relu(z))));
  };
  EXPECT_LT(check_op({&x, &W, &b, &lv}, f), 1e-6);
}

TEST(OpsGradients, ReluAndSumPool) {
  std::mt19937_64 gen(5);
  Parameter x("x", random_tensor(6, 4, gen));
  auto f = [&](Graph& g) { return sum(sum_pool(relu(g.param(x)))); };
  EXPECT_LT(check_op({&x}, f), 1e-6);
}

TEST(Adam, SingleStepMovesByLearningRate) {
  ParamSet ps;
  auto& p = ps.add("w", Tensor::row({1.0, -2.0}));
  p.grad = Tensor::row({0.3, -4.0});
  adam_step(ps, 0.01);
  // after one bias-corrected step every coordinate moves by ~lr * sign(grad)
  EXPECT_NEAR(ps[0].value[0], 1.0 - 0.01, 1e-7);
  EXPECT_NEAR(ps[0].value[1], -2.0 + 0.01, 1e-7);
  EXPECT_EQ(ps.step_count(), 1u);
}

TEST(Adam, MinimizesAQuadratic) {
  ParamSet ps;
  ps.add("w", Tensor::row({5.0, -3.0, 0.5}));
  const double target[3] = {1.0, 2.0, -1.0};
  for (int it = 0; it < 3000; ++it) {
    auto& p = ps[0];
    p.grad = Tensor(p.value.shape());
    for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2.0 * (p.value[i] - target[i]);
    adam_step(ps, 0.01);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(ps[0].value[i], target[i], 1e-3);
}
