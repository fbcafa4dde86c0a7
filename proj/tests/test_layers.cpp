#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "segan/gradcheck.hpp"
#include "segan/layers.hpp"

namespace segan {
namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, float lo = -1, float hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(numel(shape));
  for (float& x : v) x = u(rng);
  return Tensor<float>(std::move(shape), std::move(v));
}

// Direct loop convolution, independent of the im2col path.
Tensor<double> reference_conv(const Tensor<double>& x, const Tensor<double>& w,
                              const Tensor<double>& b, int stride, int pad) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long O = w.dim(0), K = w.dim(2);
  const long OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  Tensor<double> out = Tensor<double>::zeros({std::size_t(N), std::size_t(O), std::size_t(OH),
                                              std::size_t(OW)});
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long i = 0; i < OH; ++i)
        for (long j = 0; j < OW; ++j) {
          double acc = b[o];
          for (long c = 0; c < C; ++c)
            for (long kh = 0; kh < K; ++kh)
              for (long kw = 0; kw < K; ++kw) {
                const long ih = i * stride - pad + kh, iw = j * stride - pad + kw;
                if (ih < 0 || iw < 0 || ih >= H || iw >= W) continue;
                acc += w.at(o, c, kh, kw) * x.at(n, c, ih, iw);
              }
          out.at(n, o, i, j) = acc;
        }
  return out;
}

TEST(Conv2d, IdentityKernelPreservesInput) {
  std::mt19937_64 rng(1);
  ConvParams<float> p = make_conv<float>(1, 1, 3, 1, 1, rng);
  std::fill(p.weights.data().begin(), p.weights.data().end(), 0.0f);
  p.weights.at(0, 0, 1, 1) = 1.0f;
  Graph<float> g;
  Tensor<float> x = random_tensor({2, 1, 6, 6}, 3);
  EXPECT_EQ(conv2d(g.constant(x), p).value(), x);
}

TEST(Conv2d, OnesKernelCountsValidTaps) {
  std::mt19937_64 rng(1);
  ConvParams<double> p = make_conv<double>(1, 1, 4, 2, 1, rng);
  std::fill(p.weights.data().begin(), p.weights.data().end(), 1.0);
  Graph<double> g;
  const Tensor<double> x = Tensor<double>::filled({1, 1, 4, 4}, 1.0);
  const Tensor<double>& y = conv2d(g.constant(x), p).value();
  const Tensor<double> ref = reference_conv(x, p.weights, p.bias, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  // Each 4x4 window at pad 1 covers 3x3 valid pixels in the corners of a 4x4 image.
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(y[i], ref[i]);
    EXPECT_EQ(y[i], 9.0);
  }
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  std::mt19937_64 rng(4);
  for (auto [k, s] : {std::pair{4, 2}, std::pair{3, 1}}) {
    ConvParams<double> p = make_conv<double>(3, 5, k, s, 1, rng);
    std::normal_distribution<double> n(0, 1);
    for (double& v : p.bias.data()) v = n(rng);
    std::vector<double> xv(2 * 3 * 8 * 6);
    for (double& v : xv) v = n(rng);
    const Tensor<double> x({2, 3, 8, 6}, xv);
    Graph<double> g;
    const Tensor<double>& y = conv2d(g.constant(x), p).value();
    const Tensor<double> ref = reference_conv(x, p.weights, p.bias, s, 1);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, HalvesFullSizeInput) {
  std::mt19937_64 rng(2);
  ConvParams<float> p = make_conv<float>(3, 4, 4, 2, 1, rng);
  Graph<float> g;
  EXPECT_EQ(conv2d(g.constant(Tensor<float>::zeros({1, 3, 160, 160})), p).shape(),
            (Shape{1, 4, 80, 80}));
}

TEST(Conv2d, RejectsChannelMismatch) {
  std::mt19937_64 rng(2);
  ConvParams<float> p = make_conv<float>(3, 4, 4, 2, 1, rng);
  Graph<float> g;
  EXPECT_THROW(conv2d(g.constant(Tensor<float>::zeros({1, 2, 8, 8})), p), ShapeError);
}

TEST(Conv2d, DownThenUpRestoresShape) {
  std::mt19937_64 rng(2);
  ConvParams<float> down = make_conv<float>(2, 4, 4, 2, 1, rng);
  ConvParams<float> up = make_conv<float>(4, 2, 3, 1, 1, rng);
  Graph<float> g;
  for (std::size_t size : {2u, 6u, 10u, 64u}) {
    Var<float> x = g.constant(Tensor<float>::zeros({1, 2, size, size}));
    Var<float> h = conv2d(x, down);
    EXPECT_EQ(h.shape()[2], size / 2);
    EXPECT_EQ(conv2d(resize2x(h), up).shape(), x.shape());
  }
}

TEST(Resize2x, BlockReplicates) {
  Graph<float> g;
  Var<float> x = g.constant(tensor_from<float>({1, 1, 2, 2}, {1, 2, 3, 4}));
  const Tensor<float> expected = tensor_from<float>(
      {1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  EXPECT_EQ(resize2x(x).value(), expected);

  Var<float> c = g.constant(Tensor<float>::filled({1, 2, 3, 3}, 0.7f));
  EXPECT_EQ(resize2x(c).value(), Tensor<float>::filled({1, 2, 6, 6}, 0.7f));
}

TEST(Resize2x, BackwardSumsBlocks) {
  Tensor<float> x = Tensor<float>::zeros({1, 2, 3, 3}, true);
  Graph<float> g;
  g.backward(sum_all(resize2x(g.param(x))));
  for (float d : x.grad()) EXPECT_EQ(d, 4.0f);
}

TEST(LeakyRelu, ValuesAndGradients) {
  Tensor<float> x = tensor_from<float>({3}, {2.0f, -1.0f, -3.0f});
  x.set_requires_grad(true);
  Graph<float> g;
  Var<float> y = leaky_relu(g.param(x));
  EXPECT_EQ(y.value()[0], 2.0f);
  EXPECT_FLOAT_EQ(y.value()[1], -0.2f);
  g.backward(sum_all(y));
  EXPECT_EQ(x.grad()[0], 1.0f);
  EXPECT_FLOAT_EQ(x.grad()[2], 0.2f);
}

TEST(Sigmoid, ValuesAndGradients) {
  Tensor<float> x = tensor_from<float>({3}, {0.0f, 40.0f, -40.0f});
  x.set_requires_grad(true);
  Graph<float> g;
  Var<float> y = sigmoid(g.param(x));
  EXPECT_EQ(y.value()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.value()[1], 1.0f);
  EXPECT_GT(y.value()[2], 0.0f);
  EXPECT_TRUE(std::isfinite(y.value()[2]));
  g.backward(sum_all(y));
  EXPECT_EQ(x.grad()[0], 0.25f);
}

TEST(BatchNorm, TrainModeStandardizes) {
  BatchNormParams<float> p = make_batch_norm<float>(3);
  Graph<float> g;
  const Tensor<float> x = random_tensor({4, 3, 5, 5}, 8, -3, 5);
  const Tensor<float>& y = batch_norm(g.constant(x), p).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) sum += y[(n * 3 + c) * 25 + i];
    const double mean = sum / 100;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) sq += std::pow(y[(n * 3 + c) * 25 + i] - mean, 2);
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_LT(std::abs(sq / 100 - 1.0), 1e-4);
  }
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  BatchNormParams<float> p = make_batch_norm<float>(2);
  std::fill(p.gamma.data().begin(), p.gamma.data().end(), 0.0f);
  p.beta[0] = 0.3f;
  p.beta[1] = -1.5f;
  Graph<float> g;
  const Tensor<float>& y = batch_norm(g.constant(random_tensor({2, 2, 3, 3}, 1)), p).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[(n * 2 + c) * 9 + i], p.beta[c]);
}

TEST(BatchNorm, EvalModeIsAffineOfRunningStats) {
  BatchNormParams<double> p = make_batch_norm<double>(2);
  p.mode = BnMode::eval;
  p.eps = 0.0;
  p.gamma[1] = 2.0;
  p.beta[1] = 0.5;
  Graph<double> g;
  const Tensor<double> x({1, 2, 1, 2}, {1.0, -2.0, 3.0, 4.0});
  const Tensor<double>& y = batch_norm(g.constant(x), p).value();
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], -2.0);
  EXPECT_EQ(y[2], 6.5);
  EXPECT_EQ(y[3], 8.5);
}

TEST(BatchNorm, RunningStatsUseMomentum) {
  BatchNormParams<double> p = make_batch_norm<double>(1);
  Graph<double> g;
  batch_norm(g.constant(Tensor<double>({2, 1, 1, 1}, {1.0, 3.0})), p);
  EXPECT_DOUBLE_EQ(p.running_mean[0], 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(p.running_var[0], 0.9 * 1.0 + 0.1 * 2.0);  // unbiased var of {1,3} is 2
  batch_norm(g.constant(Tensor<double>({2, 1, 1, 1}, {1.0, 3.0})), p, true, false);
  EXPECT_DOUBLE_EQ(p.running_mean[0], 0.2);
}

TEST(BatchNorm, TrainModeRejectsSingletonPopulation) {
  BatchNormParams<float> p = make_batch_norm<float>(1);
  Graph<float> g;
  EXPECT_THROW(batch_norm(g.constant(Tensor<float>::zeros({1, 1, 1, 1})), p), ShapeError);
  p.mode = BnMode::eval;
  EXPECT_NO_THROW(batch_norm(g.constant(Tensor<float>::zeros({1, 1, 1, 1})), p));
}

TEST(RmsProp, ZeroGradientLeavesParameter) {
  Tensor<float> w = tensor_from<float>({2}, {0.3f, -0.7f});
  w.set_requires_grad(true);
  OptimState<float> state;
  state.learning_rate = 0.01f;
  std::vector<Tensor<float>*> params{&w};
  rmsprop_step<float>(params, state, Direction::descend);
  EXPECT_EQ(w[0], 0.3f);
  EXPECT_EQ(w[1], -0.7f);
}

TEST(RmsProp, FirstStepMagnitude) {
  // v = 0.1 after one step with g = 1, so the move is lr / (sqrt(0.1) + eps).
  const double expected = 0.01 / (std::sqrt(0.1) + 1e-8);
  for (Direction dir : {Direction::descend, Direction::ascend}) {
    Tensor<double> w = tensor_from<double>({1}, {0.5});
    w.set_requires_grad(true);
    w.grad()[0] = 1.0;
    OptimState<double> state;
    state.learning_rate = 0.01;
    std::vector<Tensor<double>*> params{&w};
    rmsprop_step<double>(params, state, dir);
    EXPECT_NEAR(w[0] - 0.5, static_cast<int>(dir) * expected, 1e-15);
    EXPECT_NEAR(state.accumulators[0][0], 0.1, 1e-15);
  }
}

TEST(RmsProp, InverseUpdateRestoresBitwise) {
  // lr 0.25, decay 0.75, eps 0: |step| = lr / sqrt(1 - decay) = 0.5 exactly.
  Tensor<float> w = tensor_from<float>({4}, {1.5f, -3.25f, 0.0f, 7.0f});
  const Tensor<float> original = w;
  w.set_requires_grad(true);
  for (std::size_t i = 0; i < 4; ++i) w.grad()[i] = i % 2 ? -2.0f : 2.0f;
  std::vector<Tensor<float>*> params{&w};
  OptimState<float> up{0.25f, 0.75f, 0.0f, {}};
  rmsprop_step<float>(params, up, Direction::ascend);
  EXPECT_NE(w, original);
  OptimState<float> down{0.25f, 0.75f, 0.0f, {}};
  rmsprop_step<float>(params, down, Direction::descend);
  EXPECT_EQ(w, original);
}

TEST(RmsProp, RequiresGradients) {
  Tensor<float> w = tensor_from<float>({1}, {1.0f});
  OptimState<float> state;
  std::vector<Tensor<float>*> params{&w};
  EXPECT_THROW(rmsprop_step<float>(params, state, Direction::descend), Error);
}

TEST(ClipWeights, ClampsIntoRange) {
  Tensor<float> w = tensor_from<float>({3}, {0.02f, -0.5f, 0.005f});
  std::vector<Tensor<float>*> params{&w};
  clip_weights<float>(params, 0.01f);
  EXPECT_EQ(w[0], 0.01f);
  EXPECT_EQ(w[1], -0.01f);
  EXPECT_EQ(w[2], 0.005f);
  EXPECT_THROW(clip_weights<float>(params, 0.0f), Error);
}

TEST(ClipWeights, ExhaustiveBoundOnRandomTensors) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor<float>> tensors;
    for (int k = 0; k < 4; ++k) tensors.push_back(random_tensor({7, 5}, rng(), -3, 3));
    std::vector<Tensor<float>*> params;
    for (auto& t : tensors) params.push_back(&t);
    const float c = std::uniform_real_distribution<float>(1e-3f, 1.0f)(rng);
    clip_weights<float>(params, c);
    for (const auto& t : tensors)
      for (float v : t.data()) ASSERT_LE(std::abs(v), c);
    EXPECT_LE(max_abs<float>(params), c);
  }
}

TEST(MakeConv, InitStatistics) {
  std::mt19937_64 rng(99);
  ConvParams<double> p = make_conv<double>(25, 25, 4, 2, 1, rng);  // 10000 weights
  double sum = 0;
  for (double v : p.weights.data()) sum += v;
  const double mean = sum / p.weights.numel();
  // Standard error of the mean is 0.02 / sqrt(10000).
  EXPECT_LT(std::abs(mean), 3 * 0.02 / 100);
  for (double b : p.bias.data()) EXPECT_EQ(b, 0.0);
}

TEST(GradientSuite, AllLayersPass) {
  for (const GradCheckResult& r : run_gradient_suite()) {
    EXPECT_TRUE(r.passed) << r.name << " rel error " << r.max_rel_error;
  }
}

}  // namespace
}  // namespace segan
