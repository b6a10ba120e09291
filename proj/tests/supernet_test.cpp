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

#include "relume/supernet.hpp"
#include "test_support.hpp"

namespace relume {
namespace {

using testing::central_difference;
using testing::random_image;
using testing::random_kernel;
using testing::relative_error;

ConvKernel scaled(const ConvKernel& k, double s) {
  ConvKernel out = k;
  out.weights = scale(k.weights, s);
  for (double& b : out.bias) b *= s;
  return out;
}

ConvKernel lowered(const SupernetState& s, std::size_t b, std::size_t c, std::size_t op) {
  const CandidateOp cand = CandidateOp::from_index(op);
  return lower_cell(CellIR{cand.kind, s.kernel(b, c, op), s.pool_window});
}

// Straight-line re-evaluation of the mixing formula: every mixed quantity is
// itself a convolution, so the whole relaxed block is built as one kernel
// and applied once. Shares no code with the Field-based forward.
Tensor mixed_block_oracle(const SupernetState& s, const Tensor& y) {
  std::vector<ConvKernel> branch_kernels;
  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    const double gate = sigmoid(s.arch.width(b));
    const auto pd = softmax(std::array<double, 2>{s.arch.depth(b, 0), s.arch.depth(b, 1)});
    std::array<ConvKernel, 2> cell;
    for (std::size_t c = 0; c < 2; ++c) {
      std::array<double, 9> logits{};
      for (std::size_t k = 0; k < 9; ++k) logits[k] = s.arch.cell(b, c, k);
      const auto p = softmax(logits);
      std::vector<ConvKernel> terms;
      for (std::size_t k = 0; k < 9; ++k) terms.push_back(scaled(lowered(s, b, c, k), p[k]));
      cell[c] = merge_parallel(terms);
    }
    ConvKernel branch = merge_parallel({scaled(cell[0], pd[0]), scaled(merge_sequential(cell[0], cell[1]), pd[1])});
    branch_kernels.push_back(scaled(branch, gate));
  }
  return conv2d(y, merge_parallel(branch_kernels));
}

SupernetState random_state(Rng& rng, double logit_scale = 1.0) {
  SupernetState s = SupernetState::initialize(rng);
  for (double& a : s.arch.values()) a = rng.uniform(-logit_scale, logit_scale);
  for (ConvKernel& k : s.weights)
    for (double& b : k.bias) b = rng.uniform(-0.1, 0.1);
  return s;
}

TEST(Supernet, CollapsesToSinglePath) {
  Rng rng(1);
  SupernetState s = SupernetState::initialize(rng);
  for (std::size_t b = 0; b < kMaxBranches; ++b) s.arch.width(b) = b == 2 ? 60.0 : -60.0;
  const std::size_t op = CandidateOp{OpKind::StandardConv, 3}.index();
  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    s.arch.depth(b, 0) = 60.0;
    s.arch.depth(b, 1) = -60.0;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 9; ++k) s.arch.cell(b, c, k) = k == op ? 60.0 : -60.0;
  }
  Tensor y = random_image(rng, 3, 12, 10);
  const ConvKernel& k = s.kernel(2, 0, op);
  Tensor expected = clamp(add(leaky_relu(conv2d(y, k), 0.01), y), clamp(y, 1e-4, 1.0), 1.0);
  EXPECT_LE(max_abs_diff(forward(s, y).u, expected), 1e-9);
}

// Residual candidates carry an identity path even with zero weights, so the
// zero network is only the identity-free one.
TEST(Supernet, ZeroNetworkReturnsClampedInput) {
  SupernetState s = SupernetState::zeros();
  for (std::size_t b = 0; b < kMaxBranches; ++b)
    for (std::size_t c = 0; c < kMaxCells; ++c) s.arch.cell(b, c, CandidateOp{OpKind::StandardConv, 3}.index()) = 5.0;
  freeze(s, Tier::Cell);
  Rng rng(2);
  Tensor y = random_image(rng, 3, 8, 8);
  y[0] = 0.0;
  EXPECT_EQ(forward(s, y).u, clamp(y, 1e-4, 1.0));
}

TEST(Supernet, MatchesMixedKernelOracle) {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    SupernetState s = random_state(rng, 2.0);
    Tensor y = random_image(rng, 3, 11, 13);
    EXPECT_LE(max_abs_diff(forward(s, y).linear, mixed_block_oracle(s, y)), 1e-10);
  }
}

TEST(Supernet, LinearPartSuperposition) {
  Rng rng(4);
  SupernetState s = random_state(rng);
  s.head.activation_slope = 1.0;
  s.head.residual = false;
  for (ConvKernel& k : s.weights) std::fill(k.bias.begin(), k.bias.end(), 0.0);
  Tensor y1 = random_image(rng, 3, 9, 9), y2 = random_image(rng, 3, 9, 9);
  const double a = 0.7, b = -1.3;
  Tensor lhs = forward(s, add(scale(y1, a), scale(y2, b))).u_raw;
  Tensor rhs = add(scale(forward(s, y1).u_raw, a), scale(forward(s, y2).u_raw, b));
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
}

TEST(Supernet, PreservesSpatialSize) {
  Rng rng(5);
  SupernetState s = random_state(rng);
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {2, 7}, {5, 3}}) {
    SupernetOutput out = forward(s, random_image(rng, 3, h, w));
    EXPECT_EQ(out.u.shape(), (std::vector<std::size_t>{3, h, w}));
  }
}

TEST(SupernetBackward, ZeroUpstream) {
  Rng rng(6);
  SupernetState s = random_state(rng);
  Tensor y = random_image(rng, 3, 6, 6);
  SupernetCache cache;
  forward(s, y, &cache);
  SupernetGradients g = backward(s, cache, Tensor({3, 6, 6}));
  for (double v : flatten(g.weights)) EXPECT_EQ(v, 0.0);
  for (double v : g.arch.values()) EXPECT_EQ(v, 0.0);
}

TEST(SupernetBackward, StaleCacheRejected) {
  Rng rng(7);
  SupernetState s = random_state(rng);
  Tensor y = random_image(rng, 3, 5, 5);
  SupernetCache cache;
  forward(s, y, &cache);
  s.kernel(0, 0, 0).weights[0] += 1e-3;
  EXPECT_THROW(backward(s, cache, Tensor({3, 5, 5}, 1.0)), StaleCacheError);
}

void check_gradients(SupernetState s, Rng& rng, std::size_t weight_samples) {
  Tensor y = random_image(rng, 3, 5, 6);
  Tensor up = random_image(rng, 3, 5, 6, -1, 1);
  auto f = [&] { return dot(up, forward(s, y).u_raw); };
  SupernetCache cache;
  forward(s, y, &cache);
  SupernetGradients g = backward(s, cache, up);
  for (std::size_t i = 0; i < ArchParams::kSize; ++i) {
    const double numeric = central_difference(f, s.arch.values()[i]);
    EXPECT_LT(relative_error(g.arch.values()[i], numeric), 1e-5) << "arch " << i;
  }
  for (std::size_t n = 0; n < weight_samples; ++n) {
    const std::size_t ki = rng.below(SupernetState::kKernelCount);
    ConvKernel& k = s.weights[ki];
    const std::size_t wi = rng.below(k.parameter_count());
    double& param = wi < k.weights.size() ? k.weights[wi] : k.bias[wi - k.weights.size()];
    const ConvKernel& gk = g.weights[ki];
    const double analytic = wi < gk.weights.size() ? gk.weights[wi] : gk.bias[wi - gk.weights.size()];
    EXPECT_LT(relative_error(analytic, central_difference(f, param)), 1e-5) << "kernel " << ki << " entry " << wi;
  }
}

TEST(SupernetBackward, MatchesFiniteDifferencesSoft) {
  Rng rng(8);
  for (int t = 0; t < 3; ++t) check_gradients(random_state(rng, 1.5), rng, 60);
}

TEST(SupernetBackward, MatchesFiniteDifferencesPartiallyFrozen) {
  Rng rng(9);
  SupernetState s = random_state(rng, 1.5);
  freeze(s, Tier::Width);
  check_gradients(s, rng, 60);
  freeze(s, Tier::Depth);
  check_gradients(s, rng, 60);
  freeze(s, Tier::Cell);
  check_gradients(s, rng, 60);
}

TEST(SupernetBackward, GatedOffBranchGetsNoGradient) {
  Rng rng(10);
  SupernetState s = random_state(rng);
  s.arch.width(3) = -20.0;
  Tensor y = random_image(rng, 3, 6, 6);
  SupernetCache cache;
  forward(s, y, &cache);
  SupernetGradients g = backward(s, cache, random_image(rng, 3, 6, 6, -1, 1));
  for (std::size_t c = 0; c < kMaxCells; ++c)
    for (std::size_t k = 0; k < kCandidateOpCount; ++k) {
      const ConvKernel& gk = g.weights[SupernetState::kernel_index(3, c, k)];
      for (double v : gk.weights.values()) EXPECT_LT(std::abs(v), 1e-8);
      for (double v : gk.bias) EXPECT_LT(std::abs(v), 1e-8);
    }
}

TEST(Discretize, KeepsGatesAboveHalf) {
  ArchParams a;
  const double logits[] = {2.0, -3.0, 0.1, -1, -1, -1, -1, -1};
  for (std::size_t b = 0; b < 8; ++b) a.width(b) = logits[b];
  auto keep = select_branches(a);
  EXPECT_TRUE(keep[0]);
  EXPECT_FALSE(keep[1]);
  EXPECT_TRUE(keep[2]);
  for (std::size_t b = 3; b < 8; ++b) EXPECT_FALSE(keep[b]);
}

TEST(Discretize, FallsBackToStrongestBranch) {
  ArchParams a;
  for (std::size_t b = 0; b < 8; ++b) a.width(b) = -5.0;
  a.width(5) = -4.0;
  auto keep = select_branches(a);
  for (std::size_t b = 0; b < 8; ++b) EXPECT_EQ(keep[b], b == 5);
  for (std::size_t b = 0; b < 8; ++b) a.width(b) = -5.0;
  const auto tied = select_branches(a);
  EXPECT_EQ(std::count(tied.begin(), tied.end(), true), 1);
}

TEST(Discretize, MergedKernelTracksHardPath) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    SupernetState s = random_state(rng, 2.0);
    LinearBlockIR ir = discretize(s);
    validate(ir);
    SupernetState hard = harden(s);
    Tensor y = random_image(rng, 3, 16, 16);
    EXPECT_LE(max_abs_diff(conv2d(y, merge_block(ir)), forward(hard, y).linear), 1e-10);
  }
}

TEST(Discretize, FromIrRoundTrip) {
  Rng rng(12);
  LinearBlockIR ir = testing::random_block(rng);
  SupernetState s = from_ir(ir);
  EXPECT_EQ(discretize(s), ir);
  Tensor y = random_image(rng, 3, 10, 10);
  EXPECT_LE(max_abs_diff(forward(s, y).linear, evaluate_block(ir, y)), 1e-10);
}

TEST(Freeze, SelectionStopsChangingWithLogits) {
  Rng rng(13);
  SupernetState s = random_state(rng);
  freeze(s, Tier::Width);
  const auto kept = *s.frozen.branches;
  for (double& a : s.arch.tier(Tier::Width)) a = -a;
  EXPECT_EQ(discretize(s).branches.size(), static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true)));
}

}  // namespace
}  // namespace relume
