#include <gtest/gtest.h>

#include <cmath>

#include "weakstrong/model.hpp"
#include "weakstrong/optim.hpp"
#include "weakstrong/verify.hpp"

using namespace weakstrong;

namespace {

ModelParams scalar_param(double theta) {
  ModelParams p;
  p.weights.push_back(Tensor2D(1, 1, {theta}));
  p.biases.push_back(Tensor2D(1, 1));
  return p;
}

Gradients scalar_grad(const ModelParams& p, double g) {
  Gradients out = zeros_like(p);
  out.weights[0].data[0] = g;
  return out;
}

}  // namespace

TEST(Sgd, ZeroGradientLeavesParams) {
  const ModelParams p = scalar_param(1.0);
  const ModelParams q = sgd_step(p, scalar_grad(p, 0.0), 0.1);
  EXPECT_EQ(q.weights[0].data[0], 1.0);
}

TEST(Sgd, ScalarArithmetic) {
  const ModelParams p = scalar_param(1.0);
  const ModelParams q = sgd_step(p, scalar_grad(p, 0.5), 0.1);
  EXPECT_DOUBLE_EQ(q.weights[0].data[0], 0.95);
}

TEST(Sgd, TwoStepsEqualSummedGradients) {
  const ModelParams p = scalar_param(2.0);
  const ModelParams two = sgd_step(sgd_step(p, scalar_grad(p, 0.3), 0.1), scalar_grad(p, 0.2), 0.1);
  const ModelParams one = sgd_step(p, scalar_grad(p, 0.5), 0.1);
  EXPECT_NEAR(two.weights[0].data[0], one.weights[0].data[0], 1e-15);
}

TEST(Sgd, ShapeMismatch) {
  const ModelParams p = scalar_param(1.0);
  ModelParams other;
  other.weights.push_back(Tensor2D(2, 2));
  other.biases.push_back(Tensor2D(1, 2));
  const Gradients g = zeros_like(other);
  EXPECT_THROW(sgd_step(p, g, 0.1), DimensionError);
}

TEST(Adam, FirstStepBiasCorrection) {
  // with m^ = g and v^ = g^2, the first update is -lr * g / (|g| + eps)
  const double lr = 1e-4;
  const ModelParams p = scalar_param(0.0);
  auto [q, st] = adam_step(p, scalar_grad(p, 0.5), init_adam(p, lr));
  const double expected = -lr * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(q.weights[0].data[0], expected, 1e-18);
  EXPECT_NEAR(q.weights[0].data[0], -9.99998e-5, 1e-9);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, ZeroGradientAtStart) {
  const ModelParams p = scalar_param(3.0);
  auto [q, st] = adam_step(p, scalar_grad(p, 0.0), init_adam(p, 1e-4));
  EXPECT_EQ(q.weights[0].data[0], 3.0);
}

TEST(Adam, ThreeStepTrajectoryMatchesReferenceLoop) {
  const double lr = 1e-4;
  const std::vector<double> grads{0.5, -0.25, 0.8};
  const std::vector<double> expected = oracle::adam_scalar_trajectory(1.0, grads, lr);
  ModelParams p = scalar_param(1.0);
  AdamState st = init_adam(p, lr);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto [next, next_st] = adam_step(p, scalar_grad(p, grads[i]), std::move(st));
    p = std::move(next);
    st = std::move(next_st);
    EXPECT_NEAR(p.weights[0].data[0], expected[i], 1e-12) << "step " << i;
  }
  EXPECT_EQ(st.t, 3u);
}

TEST(Adam, FirstStepMagnitudeBoundedByLr) {
  const double lr = 1e-4;
  for (double g : {1e-8, 1e-3, 0.5, 7.0, 1e4, -3.0}) {
    const ModelParams p = scalar_param(0.0);
    auto [q, st] = adam_step(p, scalar_grad(p, g), init_adam(p, lr));
    const double mag = std::abs(q.weights[0].data[0]);
    EXPECT_LE(mag, lr * (1.0 + 1e-9)) << "g=" << g;
    if (std::abs(g) >= 1e-3) {
      EXPECT_GE(mag, lr * (1.0 - 1e-4)) << "g=" << g;
    }
  }
}

TEST(Adam, SecondMomentNonNegative) {
  ModelParams p = scalar_param(1.0);
  AdamState st = init_adam(p, 1e-3);
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    auto [next, next_st] = adam_step(p, scalar_grad(p, rng.normal(0.0, 2.0)), std::move(st));
    p = std::move(next);
    st = std::move(next_st);
    for (double v : st.v.weights[0].data) EXPECT_GE(v, 0.0);
  }
  EXPECT_EQ(st.t, 20u);
}

TEST(Adam, DeterministicGivenInputs) {
  const ModelParams p = scalar_param(0.7);
  auto [a, sa] = adam_step(p, scalar_grad(p, 0.3), init_adam(p, 1e-4));
  auto [b, sb] = adam_step(p, scalar_grad(p, 0.3), init_adam(p, 1e-4));
  EXPECT_EQ(a.weights[0].data[0], b.weights[0].data[0]);
}

TEST(Optimizer, SgdWrapperMatchesFreeFunction) {
  Optimizer opt(OptKind::sgd, 0.1);
  const ModelParams p = scalar_param(1.0);
  const ModelParams q = opt.step(p, scalar_grad(p, 0.5));
  EXPECT_DOUBLE_EQ(q.weights[0].data[0], 0.95);
}

TEST(Optimizer, AdamWrapperCountsSteps) {
  Optimizer opt(OptKind::adam, 1e-4);
  ModelParams p = scalar_param(1.0);
  p = opt.step(p, scalar_grad(p, 0.5));
  p = opt.step(p, scalar_grad(p, 0.2));
  EXPECT_EQ(opt.steps_taken(), 2u);
}
