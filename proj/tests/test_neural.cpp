// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "patchbf/unet.hpp"

using namespace patchbf;
using nn::Tensor4;

TEST(Conv, IdentityKernelAndConstantBias) {
  Rng rng(1);
  const auto x = gradcheck::random_tensor(rng, 1, 1, 4, 4);
  std::vector<double> k(9, 0.0), b(1, 0.0);
  k[4] = 1.0;
  EXPECT_EQ(nn::conv2d<double>(x, k, b, 1), x);
  std::vector<double> zero(9, 0.0), bias{2.5};
  for (double v : nn::conv2d<double>(x, zero, bias, 1).values) EXPECT_EQ(v, 2.5);
}

TEST(Conv, HandComputedBorder) {
  Tensor4<double> x(1, 1, 2, 2);
  x.values = {1, 2, 3, 4};
  std::vector<double> ones(9, 1.0), b{0.0};
  // Every output sees the whole 2x2 input through the zero-padded 3x3 window.
  for (double v : nn::conv2d<double>(x, ones, b, 1).values) EXPECT_EQ(v, 10.0);
}

TEST(Conv, ChannelMismatchIsAShapeError) {
  Tensor4<double> x(1, 2, 4, 4);
  std::vector<double> k(9), b(1);
  EXPECT_THROW(nn::conv2d<double>(x, k, b, 1), Error);
}

TEST(LeakyRelu, Examples) {
  Tensor4<double> x(1, 1, 1, 3);
  x.values = {-2.0, 0.0, 3.0};
  const auto y = nn::leaky_relu(x, 0.1);
  EXPECT_DOUBLE_EQ(y.values[0], -0.2);
  EXPECT_EQ(y.values[1], 0.0);
  EXPECT_EQ(y.values[2], 3.0);
}

TEST(MaxPool, SingleWindowAndConstant) {
  Tensor4<double> x(1, 1, 2, 2);
  x.values = {1, 2, 3, 4};
  std::vector<std::size_t> arg;
  const auto y = nn::maxpool2(x, arg);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y.values[0], 4.0);
  Tensor4<double> g(1, 1, 1, 1, 1.0);
  EXPECT_EQ(nn::maxpool2_backward(x, arg, g).values, (std::vector<double>{0, 0, 0, 1}));

  Tensor4<double> c(2, 3, 4, 6, 0.7);
  const auto p = nn::maxpool2(c);
  EXPECT_EQ(p.h, 2u);
  EXPECT_EQ(p.w, 3u);
  for (double v : p.values) EXPECT_EQ(v, 0.7);

  Tensor4<double> tie(1, 1, 2, 2, 5.0);
  nn::maxpool2(tie, arg);
  EXPECT_EQ(arg[0], 0u);
  EXPECT_THROW(nn::maxpool2(Tensor4<double>(1, 1, 3, 4)), Error);
}

TEST(Upsample, RepeatsAndInvertsPooling) {
  Tensor4<double> v(1, 1, 1, 1, 3.25);
  for (double x : nn::upsample2(v).values) EXPECT_EQ(x, 3.25);
  Rng rng(2);
  auto x = gradcheck::random_tensor(rng, 2, 3, 4, 4);
  for (double& e : x.values) e = std::abs(e);
  EXPECT_EQ(nn::maxpool2(nn::upsample2(x)), x);
}

TEST(Concat, EmptyOperandAndChannelCount) {
  Rng rng(3);
  const auto a = gradcheck::random_tensor(rng, 1, 2, 4, 4);
  EXPECT_EQ(nn::concat_channels(a, Tensor4<double>(1, 0, 4, 4)), a);
  const auto b = gradcheck::random_tensor(rng, 1, 5, 4, 4);
  const auto c = nn::concat_channels(a, b);
  EXPECT_EQ(c.c, 7u);
  EXPECT_EQ(c.at(0, 3, 1, 2), b.at(0, 1, 1, 2));
  EXPECT_THROW(nn::concat_channels(a, gradcheck::random_tensor(rng, 1, 1, 2, 4)), Error);
}

class Gradients : public ::testing::TestWithParam<gradcheck::Check> {};

TEST_P(Gradients, MatchFiniteDifferences) {
  const auto& c = GetParam();
  Rng rng(77);
  for (int draw = 0; draw < 12; ++draw) EXPECT_LT(c.draw(rng), c.tolerance) << c.name << " draw " << draw;
}

INSTANTIATE_TEST_SUITE_P(AllOps, Gradients, ::testing::ValuesIn(gradcheck::all_checks()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(UNet, ShapePreservingForSeveralArrays) {
  for (std::size_t m : {4u, 16u, 64u}) {
    nn::UNetArchitecture arch{m, 3, m, 128, 0.1};
    const auto p = nn::init_unet<float>(arch, 5);
    Rng rng(m);
    Tensor4<float> x(1, m, 32, 32);
    for (float& v : x.values) v = static_cast<float>(rng.normal());
    const auto y = nn::unet_forward(p, x);
    EXPECT_TRUE(y.same_dims(x)) << m;
  }
}

TEST(UNet, ChannelWidthsDoubleUpToTheCap) {
  nn::UNetArchitecture arch{64, 3, 64, 128, 0.1};
  const auto blocks = nn::unet_layout(arch);
  ASSERT_EQ(blocks.size(), 6u);
  EXPECT_EQ(blocks[0].in_ch, 64u);
  EXPECT_EQ(blocks[0].out_ch, 64u);
  EXPECT_EQ(blocks[1].out_ch, 128u);
  EXPECT_EQ(blocks[2].out_ch, 128u);
  EXPECT_EQ(blocks[3].in_ch, 256u);
  EXPECT_EQ(blocks[4].in_ch, 192u);
  EXPECT_EQ(blocks[5].out_ch, 64u);
  EXPECT_EQ(nn::init_unet<float>(arch, 1).values.size(), blocks[5].bias_offset + 64);
}

TEST(UNet, ZeroFinalLayerGivesZeroOutput) {
  nn::UNetArchitecture arch{4, 2, 8, 16, 0.1};
  auto p = nn::init_unet<double>(arch, 9);
  for (double& v : p.kernel(p.final_block())) v = 0.0;
  for (double& v : p.bias(p.final_block())) v = 0.0;
  Rng rng(4);
  const auto y = nn::unet_forward(p, gradcheck::random_tensor(rng, 1, 4, 8, 8));
  for (double v : y.values) EXPECT_EQ(v, 0.0);
}

TEST(UNet, DeterministicInitAndForward) {
  nn::UNetArchitecture arch{4, 2, 8, 16, 0.1};
  const auto a = nn::init_unet<float>(arch, 123), b = nn::init_unet<float>(arch, 123);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, nn::init_unet<float>(arch, 124).values);
  Tensor4<float> x(1, 4, 8, 8);
  Rng rng(6);
  for (float& v : x.values) v = static_cast<float>(rng.uniform(-1, 1));
  EXPECT_EQ(nn::unet_forward(a, x), nn::unet_forward(b, x));
}

TEST(UNet, RejectsBadShapes) {
  nn::UNetArchitecture arch{4, 3, 8, 16, 0.1};
  const auto p = nn::init_unet<float>(arch, 1);
  EXPECT_THROW(nn::unet_forward(p, Tensor4<float>(1, 3, 8, 8)), Error);
  EXPECT_THROW(nn::unet_forward(p, Tensor4<float>(1, 4, 6, 8)), Error);
  EXPECT_THROW(nn::unet_layout({4, 0, 8, 16, 0.1}), Error);
}
