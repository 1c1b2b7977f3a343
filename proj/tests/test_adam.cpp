#include <gtest/gtest.h>

#include <cmath>

#include "cfgmoe/adam.hpp"
#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {
namespace {

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  ParameterMap params{{"w", Tensor::row({1.0, -2.0, 0.5})}};
  const ParameterMap grads{{"w", Tensor::row({0.3, -7.0, 1e-3})}};
  Adam adam(AdamConfig{.learning_rate = 1e-2});
  adam.step(params, grads);
  // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
  EXPECT_NEAR(params["w"][0], 1.0 - 1e-2, 1e-9);
  EXPECT_NEAR(params["w"][1], -2.0 + 1e-2, 1e-9);
  EXPECT_NEAR(params["w"][2], 0.5 - 1e-2, 1e-6);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, ZeroGradientLeavesParameterAndDecaysMoments) {
  ParameterMap params{{"w", Tensor::row({1.0, 2.0})}};
  Adam adam;
  adam.step(params, {{"w", Tensor::row({1.0, -1.0})}});
  const Tensor after_first = params["w"];
  const double m0 = adam.first_moment("w")[0];
  const double v0 = adam.second_moment("w")[0];
  // A zero gradient still moves the parameter through the surviving first
  // moment; with zero moments it does not move at all.
  ParameterMap fresh{{"w", Tensor::row({1.0, 2.0})}};
  Adam idle;
  idle.step(fresh, {{"w", Tensor::row({0.0, 0.0})}});
  EXPECT_EQ(fresh["w"], Tensor::row({1.0, 2.0}));
  adam.step(params, {{"w", Tensor::row({0.0, 0.0})}});
  EXPECT_DOUBLE_EQ(adam.first_moment("w")[0], 0.9 * m0);
  EXPECT_DOUBLE_EQ(adam.second_moment("w")[0], 0.999 * v0);
  EXPECT_NE(params["w"], after_first);
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  ParameterMap params{{"w", Tensor::scalar(0.0)}};
  Adam adam;
  double last = 0.0;
  for (int i = 0; i < 3; ++i) {
    adam.step(params, {{"w", Tensor::scalar(-4.0)}});
    EXPECT_GT(params["w"].item(), last);
    last = params["w"].item();
  }
}

TEST(Adam, MatchesHandWrittenUpdateOverRandomSteps) {
  Rng rng(9);
  const AdamConfig cfg{.learning_rate = 3e-4};
  ParameterMap params{{"a", Tensor::zeros(2, 2)}};
  std::vector<double> p(4, 0.0), m(4, 0.0), v(4, 0.0);
  Adam adam(cfg);
  for (int t = 1; t <= 25; ++t) {
    Tensor g = Tensor::zeros(2, 2);
    for (auto& x : g.values()) x = rng.uniform(-1, 1);
    adam.step(params, {{"a", g}});
    for (int i = 0; i < 4; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      p[i] -= 3e-4 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(params["a"][i], p[i], 1e-15);
}

TEST(Adam, NonFiniteGradientAbortsWithNameAndLeavesParameters) {
  ParameterMap params{{"layer.0.weight", Tensor::row({1.0})}, {"z", Tensor::row({2.0})}};
  Adam adam;
  try {
    adam.step(params, {{"layer.0.weight", Tensor::row({NAN})}});
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.0.weight"), std::string::npos);
  }
  EXPECT_EQ(params["layer.0.weight"][0], 1.0);
  EXPECT_EQ(adam.steps(), 0u);
}

TEST(Adam, ShapeMismatchRejected) {
  ParameterMap params{{"w", Tensor::row({1.0, 2.0})}};
  Adam adam;
  EXPECT_THROW(adam.step(params, {{"w", Tensor::row({1.0})}}), ShapeError);
}

}  // namespace
}  // namespace cfgmoe
