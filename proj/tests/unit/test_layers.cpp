#include <gtest/gtest.h>

#include <cmath>

#include "bass/layers.hpp"
#include "support/oracles.hpp"

using namespace bass;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Checks every coordinate of `grad` against a central difference of `objective` at x.
void expect_matches_fd(std::vector<double>& x, std::span<const double> grad, const std::function<double()>& objective,
                       double tol) {
  ASSERT_EQ(x.size(), grad.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    const double numeric = oracle::central_difference(
        [&](double v) {
          x[i] = v;
          return objective();
        },
        saved);
    x[i] = saved;
    EXPECT_LE(oracle::rel_err(grad[i], numeric), tol) << "coordinate " << i;
  }
}

}  // namespace

TEST(ConvXy, OneByOneIdentityFiltersAreIdentity) {
  Rng rng(1);
  const std::size_t C = 5;
  const Volume x({3, 3, C}, random_vec(45, rng));
  const ConvXySpec spec{1, C, x.shape()};
  LayerParams p{std::vector<double>(C * C, 0.0), std::vector<double>(C, 0.0)};
  for (std::size_t j = 0; j < C; ++j) p.weight[j * C + j] = 1.0;
  const auto y = conv_xy_forward(x, spec, p);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(ConvXy, PointwiseOn220ChannelsKeepsShape) {
  const ConvXySpec spec{1, 220, {3, 3, 220}};
  EXPECT_EQ(spec.out_shape(), (Shape3{3, 3, 220}));
  Rng rng(2);
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(220, rng)};
  EXPECT_EQ(conv_xy_forward(Volume({3, 3, 220}, random_vec(1980, rng)), spec, p).shape(), (Shape3{3, 3, 220}));
}

TEST(ConvXy, MatchesNaiveLoops) {
  Rng rng(3);
  const ConvXySpec spec{2, 3, {4, 4, 2}};
  const auto x = random_vec(32, rng);
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(3, rng)};
  const auto y = conv_xy_forward(Volume(spec.in_shape, x), spec, p);
  const auto ref = oracle::conv_xy(x, 4, 4, 2, p.weight, p.bias, 2, 3);
  ASSERT_EQ(y.shape(), (Shape3{3, 3, 3}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(ConvXy, ShapeLawOnRandomShapes) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const Shape3 in{1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(4)};
    const std::size_t p = 1 + rng.below(std::min(in.a, in.b));
    const std::size_t n = 1 + rng.below(4);
    const ConvXySpec spec{p, n, in};
    LayerParams params{random_vec(spec.weight_count(), rng), random_vec(n, rng)};
    const auto y = conv_xy_forward(Volume(in, random_vec(in.size(), rng)), spec, params);
    ASSERT_EQ(y.shape(), (Shape3{in.a - p + 1, in.b - p + 1, n}));
  }
}

TEST(ConvXy, WindowLargerThanInputIsRejected) {
  const ConvXySpec spec{4, 1, {3, 3, 1}};
  LayerParams p{std::vector<double>(16), std::vector<double>(1)};
  EXPECT_THROW(conv_xy_forward(zeros({3, 3, 1}), spec, p), Error);
}

TEST(ConvXy, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  const ConvXySpec spec{2, 3, {4, 3, 2}};
  auto x = random_vec(spec.in_shape.size(), rng);
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(3, rng)};
  const auto v = random_vec(spec.out_shape().size(), rng);
  auto objective = [&] { return dot(v, conv_xy_forward(Volume(spec.in_shape, x), spec, p).data()); };
  const auto g = conv_xy_backward(Volume(spec.in_shape, x), spec, p, Volume(spec.out_shape(), v));
  expect_matches_fd(p.weight, g.d_params.weight, objective, 1e-5);
  expect_matches_fd(p.bias, g.d_params.bias, objective, 1e-5);
  expect_matches_fd(x, g.d_input.data(), objective, 1e-5);
}

TEST(ConvXy, BiasGradientIsChannelSumOfCotangent) {
  Rng rng(6);
  const ConvXySpec spec{2, 4, {5, 4, 3}};
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(4, rng)};
  const Volume dy(spec.out_shape(), random_vec(spec.out_shape().size(), rng));
  const auto g = conv_xy_backward(Volume(spec.in_shape, random_vec(spec.in_shape.size(), rng)), spec, p, dy);
  for (std::size_t f = 0; f < 4; ++f) {
    double s = 0;
    for (std::size_t i = 0; i < dy.shape().a; ++i)
      for (std::size_t j = 0; j < dy.shape().b; ++j) s += dy.at(i, j, f);
    EXPECT_NEAR(g.d_params.bias[f], s, 1e-12);
  }
}

TEST(ConvLambda, ShapesOfTheDeepBranch) {
  EXPECT_EQ((ConvLambdaSpec{3, 20, {3, 3, 22}}.out_shape()), (Shape3{20, 1, 20}));
  EXPECT_EQ((ConvLambdaSpec{3, 20, {20, 1, 20}}.out_shape()), (Shape3{20, 1, 18}));
}

TEST(ConvLambda, AllOnesSumsTheWholeWindow) {
  // Unit weights and inputs: every output is A * B * p.
  const ConvLambdaSpec spec{3, 2, {3, 3, 22}};
  LayerParams p{std::vector<double>(spec.weight_count(), 1.0), std::vector<double>(2, 0.0)};
  const auto y = conv_lambda_forward(Volume({3, 3, 22}, std::vector<double>(198, 1.0)), spec, p);
  ASSERT_EQ(y.shape(), (Shape3{2, 1, 20}));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 27.0);
}

TEST(ConvLambda, MatchesNaiveLoops) {
  Rng rng(7);
  const ConvLambdaSpec spec{3, 4, {3, 2, 7}};
  const auto x = random_vec(spec.in_shape.size(), rng);
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(4, rng)};
  const auto y = conv_lambda_forward(Volume(spec.in_shape, x), spec, p);
  const auto ref = oracle::conv_lambda(x, 3, 2, 7, p.weight, p.bias, 3, 4);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(ConvLambda, ShapeLawOnRandomShapes) {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const Shape3 in{1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(9)};
    const std::size_t p = 1 + rng.below(in.c), n = 1 + rng.below(5);
    const ConvLambdaSpec spec{p, n, in};
    LayerParams params{random_vec(spec.weight_count(), rng), random_vec(n, rng)};
    ASSERT_EQ(conv_lambda_forward(Volume(in, random_vec(in.size(), rng)), spec, params).shape(),
              (Shape3{n, 1, in.c - p + 1}));
  }
}

TEST(ConvLambda, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  const ConvLambdaSpec spec{3, 2, {2, 3, 6}};
  auto x = random_vec(spec.in_shape.size(), rng);
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(2, rng)};
  const auto v = random_vec(spec.out_shape().size(), rng);
  auto objective = [&] { return dot(v, conv_lambda_forward(Volume(spec.in_shape, x), spec, p).data()); };
  const auto g = conv_lambda_backward(Volume(spec.in_shape, x), spec, p, Volume(spec.out_shape(), v));
  expect_matches_fd(p.weight, g.d_params.weight, objective, 1e-5);
  expect_matches_fd(p.bias, g.d_params.bias, objective, 1e-5);
  expect_matches_fd(x, g.d_input.data(), objective, 1e-5);
}

TEST(ConvLambda, SingleFilterInputGradientIsCorrelation) {
  // dX(x, y, c) = sum over k with 0 <= c - k < p of dY(k) * w(x, y, c - k)
  Rng rng(10);
  const ConvLambdaSpec spec{3, 1, {2, 2, 6}};
  LayerParams p{random_vec(spec.weight_count(), rng), {0.3}};
  const Volume dy(spec.out_shape(), random_vec(4, rng));
  const auto g = conv_lambda_backward(Volume(spec.in_shape, random_vec(24, rng)), spec, p, dy);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 6; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k)
          if (c >= k && c - k < 3) s += dy[k] * p.weight[(a * 2 + b) * 3 + (c - k)];
        EXPECT_NEAR(g.d_input.at(a, b, c), s, 1e-12);
      }
}

TEST(Fc, OutputLength) {
  Rng rng(11);
  const FcSpec spec{600, 100};
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(100, rng)};
  EXPECT_EQ(fc_forward(random_vec(600, rng), spec, p).size(), 100u);
}

TEST(Fc, MatchesNaiveDotProducts) {
  Rng rng(12);
  const FcSpec spec{13, 7};
  const auto x = random_vec(13, rng);
  LayerParams p{random_vec(spec.weight_count(), rng), random_vec(7, rng)};
  const auto y = fc_forward(x, spec, p);
  const auto ref = oracle::fc(x, p.weight, p.bias);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Fc, ZeroCotangentGivesZeroGradients) {
  Rng rng(13);
  const FcSpec spec{4, 3};
  LayerParams p{random_vec(12, rng), random_vec(3, rng)};
  const auto g = fc_backward(random_vec(4, rng), spec, p, std::vector<double>(3, 0.0));
  for (double v : g.d_input) EXPECT_EQ(v, 0.0);
  for (double v : g.d_params.weight) EXPECT_EQ(v, 0.0);
  for (double v : g.d_params.bias) EXPECT_EQ(v, 0.0);
}

TEST(Fc, WeightGradientIsOuterProduct) {
  Rng rng(14);
  const FcSpec spec{5, 4};
  const auto x = random_vec(5, rng), dy = random_vec(4, rng);
  LayerParams p{random_vec(20, rng), random_vec(4, rng)};
  const auto g = fc_backward(x, spec, p, dy);
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(g.d_params.weight[o * 5 + i], dy[o] * x[i]);
}

TEST(Fc, BackwardMatchesFiniteDifferences) {
  Rng rng(15);
  const FcSpec spec{6, 3};
  auto x = random_vec(6, rng);
  LayerParams p{random_vec(18, rng), random_vec(3, rng)};
  const auto v = random_vec(3, rng);
  auto objective = [&] { return dot(v, fc_forward(x, spec, p)); };
  const auto g = fc_backward(x, spec, p, v);
  expect_matches_fd(p.weight, g.d_params.weight, objective, 1e-5);
  expect_matches_fd(x, g.d_input, objective, 1e-5);
}

TEST(Relu, BackwardPassesGradientOnlyWherePositive) {
  const std::vector<double> pre{-1.0, 0.0, 2.0};
  const auto d = relu_backward(pre, std::vector<double>{5.0, 5.0, 5.0});
  EXPECT_EQ(d, (std::vector<double>{0.0, 0.0, 5.0}));
}

TEST(Dropout, InvertedScalingKeepsTheMean) {
  Rng rng(16);
  const std::vector<double> ones(100000, 1.0);
  const auto r = dropout_forward(ones, 0.5, Mode::train, rng);
  double s = 0;
  for (double v : r.output) {
    ASSERT_TRUE(v == 0.0 || v == 2.0);
    s += v;
  }
  EXPECT_NEAR(s / 1e5, 1.0, 0.02);
}

TEST(Dropout, EvalModeIsIdentityAndDrawsNothing) {
  Rng rng(17);
  const std::vector<double> x{1.0, -2.0, 3.5};
  const auto r = dropout_forward(x, 0.5, Mode::eval, rng);
  EXPECT_EQ(r.output, x);
  EXPECT_EQ(rng.counter(), 0u);
}

TEST(Dropout, MasksReproduceUnderFixedSeed) {
  Rng a(18), b(18);
  const std::vector<double> x(64, 1.0);
  EXPECT_EQ(dropout_forward(x, 0.3, Mode::train, a).mask, dropout_forward(x, 0.3, Mode::train, b).mask);
}

TEST(Dropout, BackwardAppliesTheMask) {
  EXPECT_EQ(dropout_backward(std::vector<double>{0.0, 2.0}, std::vector<double>{3.0, 3.0}),
            (std::vector<double>{0.0, 6.0}));
}

TEST(Dropout, RateOutsideRangeIsRejected) {
  Rng rng(1);
  EXPECT_THROW(dropout_forward(std::vector<double>{1.0}, 1.0, Mode::train, rng), Error);
}

TEST(Softmax, ClosedFormOfLogProbabilities) {
  const auto p = softmax(std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[2], 3.0 / 6.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto p = softmax(std::vector<double>{1000.0, 0.0});
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_NEAR(p[0], 1.0, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    auto z = random_vec(1 + rng.below(10), rng, -5, 5);
    const double shift = rng.uniform(-50, 50);
    const auto p = softmax(z);
    for (double& v : z) v += shift;
    const auto q = softmax(z);
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(CrossEntropy, UniformPredictionOverNineClasses) {
  const std::vector<std::vector<double>> probs{std::vector<double>(9, 1.0 / 9.0)};
  const std::vector<std::size_t> labels{4};
  EXPECT_NEAR(cross_entropy_loss(probs, labels).loss, 2.1972, 1e-4);
  EXPECT_NEAR(softmax_cross_entropy(std::vector<double>(9, 0.0), 4).loss, std::log(9.0), 1e-12);
}

TEST(CrossEntropy, FusedGradientMatchesFiniteDifferences) {
  Rng rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    auto z = random_vec(2 + rng.below(8), rng, -3, 3);
    const std::size_t y = rng.below(z.size());
    const auto g = softmax_cross_entropy(z, y).d_logits;
    expect_matches_fd(z, g, [&] { return softmax_cross_entropy(z, y).loss; }, 1e-6);
  }
}

TEST(CrossEntropy, GradientIsProbabilitiesMinusOneHot) {
  const std::vector<double> z{0.5, -1.0, 2.0};
  const auto r = softmax_cross_entropy(z, 2);
  const auto p = softmax(z);
  EXPECT_DOUBLE_EQ(r.d_logits[0], p[0]);
  EXPECT_DOUBLE_EQ(r.d_logits[2], p[2] - 1.0);
}

TEST(CrossEntropy, LabelOutOfRangeIsRejected) {
  EXPECT_THROW(softmax_cross_entropy(std::vector<double>{0.0, 0.0}, 2), Error);
}
