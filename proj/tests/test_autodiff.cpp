#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cfgmoe/autodiff.hpp"
#include "cfgmoe/error.hpp"
#include "cfgmoe/gradcheck.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {
namespace {

using ad::Tape;
using ad::Var;

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Reduces a matrix-valued op to a scalar through a fixed random projection so
// every output entry contributes a distinct weight.
Var project(Tape& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor& v = out.value();
  return ad::sum(ad::mul(out, tape.constant(random_tensor(v.rows(), v.cols(), rng))));
}

double check(const ScalarFn& f, std::vector<Tensor> point) {
  return finite_diff_check(f, point).max_relative_error;
}

TEST(AutodiffForward, ReluClampsNegatives) {
  Tape tape;
  const Var y = ad::relu(tape.constant(Tensor::row({-1, 0, 2})));
  EXPECT_EQ(y.value(), Tensor::row({0, 0, 2}));
}

TEST(AutodiffForward, SoftmaxOfEqualLogitsIsUniform) {
  Tape tape;
  const Var y = ad::softmax_rows(tape.constant(Tensor::row({0, 0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(AutodiffForward, SegmentSumGroupsRows) {
  Tape tape;
  const std::vector<std::size_t> seg = {0, 0, 1};
  const Var y = ad::segment_sum(tape.constant(Tensor::column({1, 2, 3})), seg, 2);
  EXPECT_EQ(y.value(), Tensor::column({3, 3}));
}

TEST(AutodiffForward, SoftmaxRowsSumToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    const Tensor x = random_tensor(4, 6, rng, -50.0, 50.0);
    const Tensor y = ad::softmax_rows(tape.constant(x)).value();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (double v : y.row_span(r)) {
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(AutodiffForward, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  const Var a = tape.constant(Tensor::zeros(2, 3));
  const Var b = tape.constant(Tensor::zeros(2, 3));
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ad::add(a, tape.constant(Tensor::zeros(3, 2))), ShapeError);
}

TEST(AutodiffForward, DropoutIsSeededAndInverted) {
  Tape tape;
  const Var x = tape.constant(Tensor::full(20, 20, 1.0));
  const Tensor a = ad::dropout(x, 0.25, 11).value();
  const Tensor b = ad::dropout(x, 0.25, 11).value();
  const Tensor c = ad::dropout(x, 0.25, 12).value();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (double v : a.values()) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
}

TEST(AutodiffBackward, SquareDerivativeAtThree) {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(3.0));
  const auto g = tape.backward(ad::mul(x, x));
  EXPECT_DOUBLE_EQ(g.of(x).item(), 6.0);
}

TEST(AutodiffBackward, ReluSubgradientIsZeroAtNegativeAndKink) {
  for (double at : {-1.0, 0.0}) {
    Tape tape;
    const Var x = tape.variable(Tensor::scalar(at));
    EXPECT_EQ(tape.backward(ad::relu(x)).of(x).item(), 0.0);
  }
}

TEST(AutodiffBackward, CrossEntropyGradientAtUniformLogits) {
  Tape tape;
  const Var z = tape.variable(Tensor::row({0.0, 0.0}));
  const std::vector<int> label = {0};
  const Tensor g = tape.backward(ad::softmax_cross_entropy(z, label)).of(z);
  EXPECT_DOUBLE_EQ(g[0], -0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
}

TEST(AutodiffBackward, NonScalarRootRejected) {
  Tape tape;
  const Var x = tape.variable(Tensor::row({1, 2}));
  EXPECT_THROW(tape.backward(ad::relu(x)), ShapeError);
}

TEST(AutodiffBackward, UntouchedParameterGetsZeroGradient) {
  Tape tape;
  const Var x = tape.variable(Tensor::row({1, 2}));
  const Var unused = tape.variable(Tensor::zeros(3, 3));
  const auto g = tape.backward(ad::sum(x));
  EXPECT_EQ(g.of(unused), Tensor::zeros(3, 3));
}

TEST(AutodiffBackward, RepeatedBackwardIsIdentical) {
  Rng rng(5);
  Tape tape;
  const Var w = tape.variable(random_tensor(3, 4, rng));
  const Var x = tape.constant(random_tensor(5, 3, rng));
  const Var h = ad::relu(ad::matmul(x, w));
  const Var root = ad::sum(ad::mul(h, h));
  const Tensor g1 = tape.backward(root).of(w);
  const Tensor g2 = tape.backward(root).of(w);
  EXPECT_EQ(g1, g2);
}

TEST(AutodiffBackward, SharedSubexpressionAccumulatesOnce) {
  // y = x*x + x: dy/dx = 2x + 1, the node x is reached through three paths.
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(1.5));
  const auto g = tape.backward(ad::add(ad::mul(x, x), x));
  EXPECT_DOUBLE_EQ(g.of(x).item(), 4.0);
}

TEST(GradCheck, SquareAtTwo) {
  const ScalarFn f = [](Tape&, std::span<const Var> in) { return ad::sum(ad::mul(in[0], in[0])); };
  EXPECT_LT(check(f, {Tensor::scalar(2.0)}), 1e-6);
}

TEST(GradCheck, LinearFunctionIsExactToRoundoff) {
  Rng rng(1);
  const Tensor coeff = random_tensor(3, 3, rng);
  const ScalarFn f = [&](Tape& tape, std::span<const Var> in) {
    return ad::sum(ad::mul(in[0], tape.constant(coeff)));
  };
  EXPECT_LT(check(f, {random_tensor(3, 3, rng)}), 1e-8);
}

// Every primitive against central differences at points drawn from [-1, 1].
class PrimitiveGradTest : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradTest, MatchesFiniteDifferences) {
  Rng rng(100 + GetParam());
  const std::vector<std::size_t> seg = {0, 2, 0, 1, 2, 2};
  const std::vector<std::size_t> gather = {3, 0, 0, 5, 2};
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = random_tensor(6, 3, rng);
    const Tensor b = random_tensor(6, 3, rng);
    const Tensor sq = random_tensor(3, 4, rng);
    const Tensor col = random_tensor(6, 1, rng);
    const Tensor row = random_tensor(1, 3, rng);
    const Tensor pos = random_tensor(6, 1, rng, 0.1, 1.0);
    const Tensor pos2 = random_tensor(6, 1, rng, 0.1, 1.0);
    const std::vector<int> labels = {0, 2, 1, 1, 0, 2};
    ScalarFn f;
    std::vector<Tensor> point;
    switch (GetParam()) {
      case 0: f = [](Tape& t, auto in) { return project(t, ad::matmul(in[0], in[1]), 1); }; point = {a, sq}; break;
      case 1: f = [](Tape& t, auto in) { return project(t, ad::add(in[0], in[1]), 2); }; point = {a, b}; break;
      case 2: f = [](Tape& t, auto in) { return project(t, ad::sub(in[0], in[1]), 3); }; point = {a, b}; break;
      case 3: f = [](Tape& t, auto in) { return project(t, ad::add_row(in[0], in[1]), 4); }; point = {a, row}; break;
      case 4: f = [](Tape& t, auto in) { return project(t, ad::mul(in[0], in[1]), 5); }; point = {a, b}; break;
      case 5: f = [](Tape& t, auto in) { return project(t, ad::mul_col(in[0], in[1]), 6); }; point = {a, col}; break;
      case 6: f = [](Tape& t, auto in) { return project(t, ad::scale(ad::add_scalar(in[0], 0.3), -2.5), 7); }; point = {a}; break;
      case 7: f = [](Tape& t, auto in) { return project(t, ad::relu(in[0]), 8); }; point = {a}; break;
      case 8: f = [](Tape& t, auto in) { return project(t, ad::sqrt(in[0]), 9); }; point = {pos}; break;
      case 9: f = [](Tape& t, auto in) { return project(t, ad::log(in[0]), 10); }; point = {pos}; break;
      case 10: f = [](Tape& t, auto in) { return project(t, ad::softmax_rows(in[0]), 11); }; point = {a}; break;
      case 11: f = [&labels](Tape&, auto in) { return ad::softmax_cross_entropy(in[0], labels); }; point = {a}; break;
      case 12:
        f = [](Tape& t, auto in) {
          const std::vector<Var> parts = {in[0], in[1]};
          return ad::add(project(t, ad::concat_cols(parts), 12), project(t, ad::concat_rows(parts), 13));
        };
        point = {a, b};
        break;
      case 13: f = [](Tape& t, auto in) { return project(t, ad::slice_cols(in[0], 1, 2), 14); }; point = {a}; break;
      case 14: f = [&gather](Tape& t, auto in) { return project(t, ad::gather_rows(in[0], gather), 15); }; point = {a}; break;
      case 15: f = [&seg](Tape& t, auto in) { return project(t, ad::segment_sum(in[0], seg, 4), 16); }; point = {a}; break;
      case 16: f = [&seg](Tape& t, auto in) { return project(t, ad::segment_max(in[0], seg, 3), 17); }; point = {a}; break;
      case 17:
        f = [&seg](Tape& t, auto in) { return project(t, ad::segment_normalize(in[0], in[1], seg, 3), 18); };
        point = {pos, pos2};
        break;
      case 18:
        f = [](Tape& t, auto in) { return project(t, ad::topk_normalize(ad::softmax_rows(in[0]), 2), 19); };
        point = {a};
        break;
      case 19: f = [](Tape&, auto in) { return ad::sum(ad::xlogx(in[0], 6.0)); }; point = {pos}; break;
      case 20: f = [](Tape& t, auto in) { return project(t, ad::mean_rows(in[0]), 20); }; point = {a}; break;
      case 21: f = [](Tape& t, auto in) { return project(t, ad::dropout(in[0], 0.4, 9), 21); }; point = {a}; break;
      default: FAIL();
    }
    EXPECT_LT(check(f, point), 1e-4) << "primitive case " << GetParam() << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradTest, ::testing::Range(0, 22));

TEST(AutodiffBackward, SegmentNormalizeUsesFallbackForZeroMass) {
  Tape tape;
  const std::vector<std::size_t> seg = {0, 0, 1, 1};
  const Var w = tape.constant(Tensor::column({0, 0, 1, 3}));
  const Var fb = tape.constant(Tensor::column({1, 3, 5, 5}));
  const Tensor y = ad::segment_normalize(w, fb, seg, 2).value();
  EXPECT_EQ(y, Tensor::column({0.25, 0.75, 0.25, 0.75}));
}

TEST(AutodiffBackward, TopkTiesGoToLowerIndex) {
  Tape tape;
  const Tensor y = ad::topk_normalize(tape.constant(Tensor::row({0.2, 0.3, 0.3, 0.2})), 2).value();
  EXPECT_EQ(y, Tensor::row({0.0, 0.5, 0.5, 0.0}));
  const Tensor y1 = ad::topk_normalize(tape.constant(Tensor::row({0.25, 0.25, 0.25, 0.25})), 1).value();
  EXPECT_EQ(y1, Tensor::row({1.0, 0.0, 0.0, 0.0}));
}

}  // namespace
}  // namespace cfgmoe
