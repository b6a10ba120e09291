// Copyright 2026 The Relume Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "relume/conv.hpp"
#include "relume/kernel_algebra.hpp"
#include "test_support.hpp"

namespace relume {
namespace {

using testing::central_difference;
using testing::direct_conv;
using testing::random_image;
using testing::random_kernel;
using testing::relative_error;

TEST(Conv2d, IdentityOneByOne) {
  Rng rng(1);
  Tensor x = random_image(rng, 3, 6, 5);
  ConvKernel k(3, 3, 1, 1);
  for (std::size_t c = 0; c < 3; ++c) k.weights.at(c, c, 0, 0) = 1.0;
  EXPECT_EQ(conv2d(x, k), x);
}

TEST(Conv2d, ConstantFieldInteriorSum) {
  Tensor x({1, 6, 6}, 0.3);
  ConvKernel k(1, 1, 3, 3);
  for (double& v : k.weights.values()) v = 1.0;
  Tensor y = conv2d(x, k);
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t c = 1; c < 5; ++c) EXPECT_NEAR(y.at(0, r, c), 9 * 0.3, 1e-15);
  EXPECT_NEAR(y.at(0, 0, 0), 4 * 0.3, 1e-15);
}

TEST(Conv2d, MatchesDirectDefinition) {
  Rng rng(2);
  for (std::size_t c : {1u, 2u, 3u}) {
    for (std::size_t kh : {1u, 3u, 5u}) {
      for (std::size_t kw : {1u, 3u, 5u}) {
        for (std::size_t h : {1u, 4u, 16u}) {
          Tensor x = random_image(rng, c, h, 16 - h / 2);
          ConvKernel k = random_kernel(rng, 3, c, kh, kw);
          EXPECT_LE(max_abs_diff(conv2d(x, k), direct_conv(x, k)), 1e-12);
          std::vector<double> fill(c);
          for (double& f : fill) f = rng.uniform(-1, 1);
          EXPECT_LE(max_abs_diff(conv2d(x, k, Padding::constant(fill)), direct_conv(x, k, fill)), 1e-12);
        }
      }
    }
  }
}

TEST(Conv2d, RandomThreeChannelEightByEight) {
  Rng rng(3);
  Tensor x = random_image(rng, 3, 8, 8);
  ConvKernel k = random_kernel(rng, 3, 3, 3, 3);
  EXPECT_LE(max_abs_diff(conv2d(x, k), direct_conv(x, k)), 1e-12);
}

TEST(Conv2d, Linearity) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x1 = random_image(rng, 3, 9, 7), x2 = random_image(rng, 3, 9, 7);
    ConvKernel k = random_kernel(rng, 3, 3, 5, 3);
    std::fill(k.bias.begin(), k.bias.end(), 0.0);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    Tensor lhs = conv2d(add(scale(x1, a), scale(x2, b)), k);
    Tensor rhs = add(scale(conv2d(x1, k), a), scale(conv2d(x2, k), b));
    EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
  }
}

TEST(Conv2d, ChannelMismatchNamesDimension) {
  try {
    conv2d(Tensor({2, 4, 4}), ConvKernel(3, 3, 3, 3));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.dimension(), "channels");
  }
  EXPECT_THROW(ConvKernel(3, 3, 2, 3), DomainError);
  EXPECT_THROW(conv2d_backward(Tensor({3, 4, 4}), ConvKernel(3, 3, 3, 3), Tensor({3, 4, 5})),
               ShapeError);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  Tensor x = random_image(rng, 3, 5, 5);
  ConvKernel k = random_kernel(rng, 3, 3, 3, 3);
  auto g = conv2d_backward(x, k, Tensor({3, 5, 5}));
  for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.kernel.weights.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.kernel.bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, ScalarCalculus) {
  Tensor x({1, 1, 1}, 0.7);
  ConvKernel k(1, 1, 1, 1);
  k.weights[0] = -1.3;
  k.bias[0] = 0.2;
  auto g = conv2d_backward(x, k, Tensor({1, 1, 1}, 1.0));
  EXPECT_DOUBLE_EQ(g.kernel.weights[0], 0.7);
  EXPECT_DOUBLE_EQ(g.input[0], -1.3);
  EXPECT_DOUBLE_EQ(g.kernel.bias[0], 1.0);
}

// f = <upstream, conv(x)>, so every partial of f is one entry of the backward.
TEST(Conv2dBackward, MatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t kh = 1 + 2 * rng.below(3), kw = 1 + 2 * rng.below(3);
    Tensor x = random_image(rng, 3, 5, 5, -1, 1);
    ConvKernel k = random_kernel(rng, 2, 3, kh, kw);
    Tensor up = random_image(rng, 2, 5, 5, -1, 1);
    const bool constant_pad = trial % 2 == 1;
    Padding padding;
    if (constant_pad) padding = Padding::constant({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    auto f = [&] { return dot(up, conv2d(x, k, padding)); };
    auto g = conv2d_backward(x, k, up, padding);
    for (std::size_t i = 0; i < x.size(); ++i)
      EXPECT_LT(relative_error(g.input[i], central_difference(f, x[i])), 1e-6);
    for (std::size_t i = 0; i < k.weights.size(); ++i)
      EXPECT_LT(relative_error(g.kernel.weights[i], central_difference(f, k.weights[i])), 1e-6);
    for (std::size_t o = 0; o < k.bias.size(); ++o)
      EXPECT_LT(relative_error(g.kernel.bias[o], central_difference(f, k.bias[o])), 1e-6);
    if (constant_pad) {
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_LT(relative_error(g.padding[c], central_difference(f, padding.values[c])), 1e-6);
    }
  }
}

TEST(LeakyRelu, Definition) {
  Tensor x({1, 1, 3}, std::vector<double>{-1.0, 0.0, 2.0});
  Tensor y = leaky_relu(x, 0.01);
  EXPECT_DOUBLE_EQ(y[0], -0.01);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  Rng rng(7);
  Tensor pos = random_image(rng, 3, 4, 4);
  EXPECT_EQ(leaky_relu(pos, 0.2), pos);
}

TEST(LeakyRelu, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_image(rng, 2, 3, 3, -1, 1);
    for (double& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    Tensor up = random_image(rng, 2, 3, 3, -1, 1);
    const double slope = rng.uniform(0.01, 0.5);
    auto f = [&] { return dot(up, leaky_relu(x, slope)); };
    Tensor g = leaky_relu_backward(x, slope, up);
    for (std::size_t i = 0; i < x.size(); ++i)
      EXPECT_LT(relative_error(g[i], central_difference(f, x[i])), 1e-6);
  }
}

TEST(AvgPool, ConstantInteriorAndWindowOne) {
  Tensor x({2, 5, 5}, 0.4);
  Tensor y = avg_pool(x, 3);
  EXPECT_NEAR(y.at(1, 2, 2), 0.4, 1e-15);
  Rng rng(9);
  Tensor r = random_image(rng, 3, 4, 6);
  EXPECT_EQ(avg_pool(r, 1), r);
  EXPECT_THROW(avg_pool(r, 2), DomainError);
}

TEST(AvgPool, EqualsDepthwiseConvWithPoolKernel) {
  Rng rng(10);
  for (std::size_t window : {1u, 3u, 5u}) {
    Tensor x = random_image(rng, 3, 11, 9);
    EXPECT_LE(max_abs_diff(avg_pool(x, window), conv2d(x, avgpool_kernel(3, window))), 1e-12);
  }
}

TEST(AvgPool, BackwardMatchesFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_image(rng, 3, 5, 4, -1, 1);
    Tensor up = random_image(rng, 3, 5, 4, -1, 1);
    Padding padding = Padding::constant({rng.uniform(), rng.uniform(), rng.uniform()});
    auto f = [&] { return dot(up, avg_pool(x, 3, padding)); };
    auto g = avg_pool_backward(x, 3, up, padding);
    for (std::size_t i = 0; i < x.size(); ++i)
      EXPECT_LT(relative_error(g.input[i], central_difference(f, x[i])), 1e-6);
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_LT(relative_error(g.padding[c], central_difference(f, padding.values[c])), 1e-6);
  }
}

TEST(Conv2d, FloatPathAgreesWithDouble) {
  Rng rng(13);
  Tensor x = random_image(rng, 3, 8, 8);
  ConvKernel k = random_kernel(rng, 3, 3, 3, 3);
  TensorF yf = conv2d(x.cast<float>(), k.cast<float>());
  EXPECT_LE(max_abs_diff(yf.cast<double>(), conv2d(x, k)), 1e-5);
}

}  // namespace
}  // namespace relume
