#include <gtest/gtest.h>

#include <random>

#include "segan/models.hpp"

namespace segan {
namespace {

Tensor<float> random_input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(numel(shape));
  for (float& x : v) x = u(rng);
  return Tensor<float>(std::move(shape), std::move(v));
}

TEST(Segmentor, FullSizeOutput) {
  NetParams<float> s = build_segmentor<float>(NetSpec::segmentor(3, 3), 1);
  Graph<float> g;
  Var<float> y = segmentor_forward(s, g.constant(random_input({1, 3, 160, 160}, 2)));
  ASSERT_EQ(y.shape(), (Shape{1, 3, 160, 160}));
  for (float p : y.value().data()) {
    ASSERT_GT(p, 0.0f);
    ASSERT_LT(p, 1.0f);
  }
}

TEST(Segmentor, DeskSizeOutput) {
  NetParams<float> s = build_segmentor<float>(NetSpec::segmentor(3, 3, 16), 1);
  Graph<float> g;
  Var<float> y = segmentor_forward(s, g.constant(random_input({2, 3, 64, 64}, 2)));
  EXPECT_EQ(y.shape(), (Shape{2, 3, 64, 64}));
}

TEST(Segmentor, RejectsIndivisibleSizes) {
  NetParams<float> s = build_segmentor<float>(NetSpec::segmentor(3, 3, 4), 1);
  Graph<float> g;
  EXPECT_THROW(segmentor_forward(s, g.constant(random_input({1, 3, 161, 161}, 2))), ShapeError);
  EXPECT_THROW(segmentor_forward(s, g.constant(random_input({1, 3, 40, 40}, 2))), ShapeError);
  EXPECT_THROW(segmentor_forward(s, g.constant(random_input({1, 2, 32, 32}, 2))), ShapeError);
}

TEST(Segmentor, RoundTripShapeForEvenSizes) {
  NetParams<float> s = build_segmentor<float>(NetSpec::segmentor(3, 2, 4), 3);
  s.set_bn_mode(BnMode::eval);
  for (std::size_t size : {16, 32, 48, 80}) {
    Graph<float> g;
    Var<float> y = segmentor_forward(s, g.constant(random_input({1, 3, size, size}, size)));
    EXPECT_EQ(y.shape(), (Shape{1, 2, size, size}));
  }
}

TEST(Segmentor, BatchIndependenceInEvalMode) {
  NetParams<float> s = build_segmentor<float>(NetSpec::segmentor(3, 3, 8), 4);
  s.set_bn_mode(BnMode::eval);
  Tensor<float> one = random_input({1, 3, 32, 32}, 5);
  std::vector<float> twice(one.data().begin(), one.data().end());
  twice.insert(twice.end(), one.data().begin(), one.data().end());
  Graph<float> g;
  Var<float> y = segmentor_forward(s, g.constant(Tensor<float>({2, 3, 32, 32}, twice)));
  const std::size_t half = y.value().numel() / 2;
  for (std::size_t i = 0; i < half; ++i) ASSERT_EQ(y.value()[i], y.value()[half + i]);
}

TEST(Segmentor, SkipWiringMatters) {
  NetParams<float> s = build_segmentor<float>(NetSpec::segmentor(3, 3, 4), 6);
  Tensor<float> x = random_input({2, 3, 32, 32}, 7);
  Graph<float> g;
  ForwardOptions plain;
  plain.update_running_stats = false;
  const Tensor<float> base = segmentor_forward(s, g.constant(x), plain).value();
  for (int k = 0; k < 3; ++k) {
    ForwardOptions opts = plain;
    opts.ablate_skip = k;
    const Tensor<float> ablated = segmentor_forward(s, g.constant(x), opts).value();
    EXPECT_NE(ablated, base) << "skip " << k;
  }
}

TEST(Segmentor, SeedDeterminism) {
  NetSpec spec = NetSpec::segmentor(3, 3, 4);
  NetParams<float> a = build_segmentor<float>(spec, 9), b = build_segmentor<float>(spec, 9);
  NetParams<float> c = build_segmentor<float>(spec, 10);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i], *pb[i]);
    differs = differs || !(*pa[i] == *pc[i]);
  }
  EXPECT_TRUE(differs);
}

TEST(Segmentor, ArchitectureAudit) {
  NetParams<float> s = build_segmentor<float>(NetSpec::segmentor(3, 3), 1);
  ASSERT_EQ(s.down.size(), 4u);
  ASSERT_EQ(s.up.size(), 4u);
  const std::size_t down_out[] = {64, 128, 256, 512};
  std::size_t in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& b = s.down[i];
    EXPECT_EQ(b.conv.kernel(), 4u);
    EXPECT_EQ(b.conv.stride, 2);
    EXPECT_EQ(b.conv.in_channels(), in);
    EXPECT_EQ(b.conv.out_channels(), down_out[i]);
    EXPECT_EQ(b.bn.has_value(), i > 0);
    in = down_out[i];
  }
  // Decoder: 512 -> 256, then (256 + 256) -> 128, (128 + 128) -> 64, (64 + 64) -> 64.
  const std::size_t up_in[] = {512, 512, 256, 128};
  const std::size_t up_out[] = {256, 128, 64, 64};
  for (std::size_t j = 0; j < 4; ++j) {
    const auto& b = s.up[j];
    EXPECT_EQ(b.conv.kernel(), 3u);
    EXPECT_EQ(b.conv.stride, 1);
    EXPECT_EQ(b.conv.in_channels(), up_in[j]);
    EXPECT_EQ(b.conv.out_channels(), up_out[j]);
    EXPECT_TRUE(b.bn.has_value());
  }
  ASSERT_TRUE(s.head.has_value());
  EXPECT_EQ(s.head->kernel(), 3u);
  EXPECT_EQ(s.head->out_channels(), 3u);
}

TEST(Segmentor, SpecValidation) {
  NetSpec spec = NetSpec::segmentor(3, 3);
  spec.up_blocks = 3;
  EXPECT_THROW(build_segmentor<float>(spec, 1), ShapeError);
  spec = NetSpec::segmentor(3, 0);
  EXPECT_THROW(build_segmentor<float>(spec, 1), ShapeError);
  EXPECT_THROW(build_segmentor<float>(NetSpec::critic(3), 1), ShapeError);
  EXPECT_THROW(build_critic<float>(NetSpec::segmentor(3, 3), 1), ShapeError);
}

TEST(Critic, FeatureShapesAtDefaults) {
  NetParams<float> c = build_critic<float>(NetSpec::critic(3), 1);
  Graph<float> g;
  auto f = critic_features(c, g.constant(random_input({1, 3, 64, 64}, 3)));
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0].shape(), (Shape{1, 3, 64, 64}));
  EXPECT_EQ(f[1].shape(), (Shape{1, 64, 32, 32}));
  EXPECT_EQ(f[2].shape(), (Shape{1, 128, 16, 16}));
  EXPECT_EQ(f[3].shape(), (Shape{1, 256, 8, 8}));
  EXPECT_FALSE(c.down[0].bn.has_value());
  EXPECT_TRUE(c.down[1].bn.has_value());
  EXPECT_FALSE(c.head.has_value());
  EXPECT_TRUE(c.up.empty());
}

TEST(Critic, DepthMatchesBlocks) {
  for (int blocks : {1, 2, 3, 4}) {
    NetSpec spec = NetSpec::critic(2, 4);
    spec.down_blocks = blocks;
    NetParams<float> c = build_critic<float>(spec, 1);
    Graph<float> g;
    auto f = critic_features(c, g.constant(random_input({2, 2, 32, 32}, 3)));
    EXPECT_EQ(f.size(), static_cast<std::size_t>(blocks) + 1);
    EXPECT_EQ(f.back().shape()[2], 32u >> blocks);
  }
}

TEST(Critic, MaxLayerTruncates) {
  NetParams<float> c = build_critic<float>(NetSpec::critic(3, 4), 1);
  Graph<float> g;
  auto f = critic_features(c, g.constant(random_input({2, 3, 16, 16}, 3)), {}, 1);
  EXPECT_EQ(f.size(), 2u);
}

TEST(Critic, ZeroInputGivesZeroFeatures) {
  NetParams<float> c = build_critic<float>(NetSpec::critic(3, 8), 2);
  Graph<float> g;
  auto f = critic_features(c, g.constant(Tensor<float>::zeros({2, 3, 16, 16})));
  for (const auto& v : f) {
    for (float x : v.value().data()) ASSERT_EQ(x, 0.0f);
  }
}

TEST(Critic, ChannelMismatch) {
  NetParams<float> c = build_critic<float>(NetSpec::critic(3, 4), 2);
  Graph<float> g;
  EXPECT_THROW(critic_features(c, g.constant(Tensor<float>::zeros({1, 9, 16, 16}))), ShapeError);
}

TEST(Critic, NamedTensorsCoverParameters) {
  NetParams<float> c = build_critic<float>(NetSpec::critic(3, 4), 2);
  auto named = c.named_tensors();
  std::size_t learned = 0;
  for (const auto& n : named) {
    learned += n.role.rfind("bn_running", 0) != 0;
  }
  EXPECT_EQ(learned, c.parameters().size());
  EXPECT_EQ(named.front().name, "down0.conv.weight");
}

}  // namespace
}  // namespace segan
