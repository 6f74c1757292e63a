#include <gtest/gtest.h>

#include <random>

#include "nvpf/core/grad_check.hpp"
#include "nvpf/emonet/emonet.hpp"

using namespace nvpf;
using namespace nvpf::emonet;

TEST(EmoNetConfig, PaperShapeChainMatchesTable) {
  const auto cfg = paper_config(64);
  const auto chain = shape_chain(cfg);
  const std::vector<Shape> table_inputs = {
      {112, 112, 3}, {56, 56, 64}, {56, 56, 64},  {28, 28, 64},  {14, 14, 128},
      {14, 14, 128}, {7, 7, 128},  {7, 7, 128},   {7, 7, 512},   {1, 1, 512}};
  const auto rows = paper_row_starts();
  ASSERT_EQ(rows.size(), table_inputs.size());
  for (std::size_t r = 0; r < rows.size(); ++r) EXPECT_EQ(chain[rows[r]], table_inputs[r]) << "row " << r;
  EXPECT_EQ(chain.back(), (Shape{64}));
}

TEST(EmoNetConfig, PaperExpansionWidthsFollowTable) {
  const auto cfg = paper_config(64);
  const std::vector<int> widths = {128, 128, 128, 128, 128, 128, 256, 256, 256, 256, 256, 256, 256, 256};
  std::vector<int> got;
  for (const auto& l : cfg.layers)
    if (const auto* b = std::get_if<BottleneckConfig>(&l)) got.push_back(b->expanded());
  EXPECT_EQ(got, widths);
}

TEST(EmoNetConfig, PaperFitsUnderTenMegabytes) {
  const auto n = param_count(paper_config(64));
  EXPECT_LT(n * sizeof(float), 10u * 1000u * 1000u);
}

TEST(EmoNetConfig, ToyParamCountByHand) {
  // conv 3x3 1->8 + affine: 72 + 16; depthwise 3x3 x8 + affine: 72 + 16;
  // bottleneck 8->16->8: (128 + 32) + (144 + 32) + (128 + 16), twice;
  // conv 1x1 8->16 + affine: 128 + 32; spatial fc 4x4x16 + affine: 256 + 32;
  // dense 16->8 with bias: 136.
  const auto cfg = toy_config(8);
  EXPECT_EQ(param_count(cfg), 1720u);
  EmoNet net(cfg, 1);
  EXPECT_EQ(count_scalars(net.parameters()), 1720u);
}

TEST(EmoNetConfig, HeadAddsParameters) {
  auto cfg = toy_config(8);
  cfg.num_classes = 8;
  EmoNet net(cfg, 1);
  EXPECT_EQ(param_count(cfg), 1720u + 9u * 8u);
  EXPECT_EQ(count_scalars(net.parameters()), param_count(cfg));
  const auto face = Tensor::zeros({16, 16, 1});
  EXPECT_EQ(net.logits(net.forward(face)).shape(), (Shape{8}));
  EmoNet bare(toy_config(8), 1);
  EXPECT_THROW(bare.logits(Tensor::zeros({8})), ConfigError);
}

TEST(EmoNetConfig, JsonRoundTrip) {
  const auto cfg = paper_config(32);
  const auto back = config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(param_count(back), param_count(cfg));
}

TEST(EmoNetConfig, InconsistentChannelsRejected) {
  auto cfg = toy_config(8);
  std::get<ConvSpec>(cfg.layers[4]).in_channels = 9;
  EXPECT_THROW(shape_chain(cfg), ConfigError);
  auto j = to_json(toy_config(8));
  j["layers"][0]["type"] = "pool";
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = to_json(toy_config(8));
  j["feature_dim"] = 9;
  EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Bottleneck, ResidualIffStrideOne) {
  EXPECT_NO_THROW((BottleneckConfig{2, 1, 4, 4, true}.validate()));
  EXPECT_NO_THROW((BottleneckConfig{2, 2, 4, 8, false}.validate()));
  EXPECT_THROW((BottleneckConfig{2, 2, 4, 4, true}.validate()), ConfigError);
  EXPECT_THROW((BottleneckConfig{2, 1, 4, 4, false}.validate()), ConfigError);
  EXPECT_THROW((BottleneckConfig{2, 1, 4, 8, true}.validate()), ConfigError);
  EXPECT_THROW((BottleneckConfig{0, 2, 4, 8, false}.validate()), ConfigError);
}

TEST(Bottleneck, StrideTwoHalvesSpatialSize) {
  std::mt19937_64 rng(3);
  const BottleneckConfig cfg{2, 2, 4, 6, false};
  const auto x = normal_tensor({8, 8, 4}, 1.0, rng);
  const auto y = bottleneck_forward(x, cfg, bottleneck_params(cfg, 5));
  EXPECT_EQ(y.shape(), (Shape{4, 4, 6}));
}

TEST(Bottleneck, ZeroParamsResidualIsIdentity) {
  std::mt19937_64 rng(4);
  const BottleneckConfig cfg{2, 1, 3, 3, true};
  const auto x = normal_tensor({5, 5, 3}, 1.0, rng);
  const auto y = bottleneck_forward(x, cfg, bottleneck_params(cfg, 0, Init::zeros));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Bottleneck, ChannelMismatchThrows) {
  const BottleneckConfig cfg{2, 1, 3, 3, true};
  EXPECT_THROW(bottleneck_forward(Tensor::zeros({4, 4, 2}), cfg, bottleneck_params(cfg, 0)),
               ShapeError);
}

TEST(EmoNet, ForwardTraceMatchesShapeChain) {
  const auto cfg = toy_config(8);
  EmoNet net(cfg, 2);
  std::mt19937_64 rng(9);
  std::vector<Shape> trace;
  const auto y = net.forward(uniform_tensor({16, 16, 1}, 0.0, 1.0, rng), &trace);
  EXPECT_EQ(trace, shape_chain(cfg));
  EXPECT_EQ(y.shape(), (Shape{8}));
  EXPECT_THROW(net.forward(Tensor::zeros({16, 15, 1})), ShapeError);
}

TEST(EmoNet, SameSeedSameWeights) {
  EmoNet a(toy_config(8), 11), b(toy_config(8), 11), c(toy_config(8), 12);
  const auto face = Tensor::full({16, 16, 1}, 0.3);
  const auto ya = a.forward(face), yb = b.forward(face), yc = c.forward(face);
  EXPECT_EQ(ya.values(), yb.values());
  EXPECT_NE(ya.values(), yc.values());
}

TEST(EmoNet, GradientsMatchFiniteDifferences) {
  EmoNet net(toy_config(4), 21);
  std::mt19937_64 rng(22);
  const auto face = uniform_tensor({16, 16, 1}, -1.0, 1.0, rng);
  // Dead channels make depthwise outputs exactly zero; nonzero shifts keep
  // every pre-activation off the ReLU kink.
  std::uniform_real_distribution<double> off(0.05, 0.2);
  for (auto& p : net.parameters())
    if (p.name.ends_with(".shift"))
      for (auto& v : p.tensor.mutable_data()) v = off(rng);
  const auto params = tensors_of(net.parameters());
  const auto loss = [&] { return sum(square(net.forward(face))); };
  EXPECT_LE(grad_check_params(loss, params, 1e-6, 0, 5), 1e-4);
}
