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

#include <cmath>
#include <utility>

#include "relume/search.hpp"
#include "test_support.hpp"

namespace relume {
namespace {

using testing::random_image;
using testing::relative_error;

// Inner problem (w - a)^2, outer w^2.
BilevelGrad toy_train(std::span<const double> w, std::span<const double> a) {
  const double d = w[0] - a[0];
  return {d * d, {2.0 * d}, {-2.0 * d}};
}
BilevelGrad toy_val(std::span<const double> w, std::span<const double>) { return {w[0] * w[0], {2.0 * w[0]}, {0.0}}; }

// d/da of (w - lr * 2 (w - a))^2 is 2 w' * 2 lr.
double toy_closed_form(double w, double a, double lr) {
  const double w1 = w - lr * 2.0 * (w - a);
  return 4.0 * lr * w1;
}

TEST(Hypergradient, ScalarToyMatchesClosedForm) {
  for (double lr : {1e-3, 1e-2}) {
    for (auto [w, a] : std::vector<std::pair<double, double>>{{1.0, 0.0}, {0.3, -0.7}, {-2.0, 0.5}}) {
      const std::vector<double> ws{w}, as{a};
      const auto h = one_step_hypergradient(ws, as, toy_train, toy_val, lr, 0.01);
      EXPECT_LT(relative_error(h[0], toy_closed_form(w, a, lr), 0.0), 1e-4) << lr << ' ' << w << ' ' << a;
    }
  }
}

TEST(Hypergradient, ZeroLearningRateIsDirectGradient) {
  auto val = [](std::span<const double> w, std::span<const double> a) {
    return BilevelGrad{w[0] * a[0], {a[0]}, {w[0]}};
  };
  const std::vector<double> ws{0.7}, as{-1.5};
  EXPECT_EQ(one_step_hypergradient(ws, as, toy_train, val, 0.0, 0.01)[0], 0.7);
  EXPECT_EQ(one_step_hypergradient(ws, as, toy_train, val, 1e-3, 0.01, false)[0], 0.7);
}

TEST(Hypergradient, ZeroValidationGradientGivesZero) {
  auto val = [](std::span<const double>, std::span<const double>) { return BilevelGrad{1.0, {0.0}, {0.0}}; };
  const std::vector<double> ws{0.7}, as{-1.5};
  EXPECT_EQ(one_step_hypergradient(ws, as, toy_train, val, 1e-2, 0.01)[0], 0.0);
}

TEST(Hypergradient, NonFiniteLossAborts) {
  auto val = [](std::span<const double>, std::span<const double>) { return BilevelGrad{NAN, {0.0}, {0.0}}; };
  const std::vector<double> ws{0.7}, as{-1.5};
  EXPECT_THROW(one_step_hypergradient(ws, as, toy_train, val, 1e-2, 0.01), DivergenceError);
}

struct SmallProblem {
  std::vector<Sample> tr, val;
  SupernetState state;
};

SmallProblem small_problem(std::uint64_t seed, std::size_t n = 2, std::size_t size = 8) {
  Rng rng(seed);
  std::vector<Tensor> tr, val;
  for (std::size_t i = 0; i < n; ++i) tr.push_back(random_image(rng, 3, size, size, 0.0, 0.5));
  for (std::size_t i = 0; i < n; ++i) val.push_back(random_image(rng, 3, size, size, 0.0, 0.5));
  SmallProblem p{make_samples(tr), make_samples(val), SupernetState::initialize(rng)};
  for (double& v : p.state.arch.values()) v = rng.uniform(-1.0, 1.0);
  return p;
}

// F(a) = L_val(w - lr grad_w L_tr(w, a), a), differentiated numerically in a.
TEST(Hypergradient, SupernetMatchesFiniteDifferenceOfUnrolledObjective) {
  SmallProblem p = small_problem(1);
  SearchConfig cfg;
  cfg.lr_weights = 0.05;
  const std::vector<std::size_t> batch{0, 1};
  const ArchParams h = hypergradient(p.state, Tier::Width, p.tr, batch, p.val, batch, cfg);

  auto unrolled = [&](const SupernetState& s) {
    SupernetState inner = s;
    const BatchLoss l = evaluate_batch(s, p.tr, batch, cfg.loss);
    std::vector<double> w = flatten(s.weights);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr_weights * l.grad_weights[i];
    assign(inner.weights, w);
    return evaluate_batch(inner, p.val, batch, cfg.loss, false).total;
  };
  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    SupernetState s = p.state;
    const double step = 1e-5;
    s.arch.width(b) += step;
    const double fp = unrolled(s);
    s.arch.width(b) -= 2 * step;
    const double fm = unrolled(s);
    EXPECT_LT(relative_error(h.width(b), (fp - fm) / (2 * step)), 1e-3) << "branch " << b;
  }
  for (double v : h.tier(Tier::Depth)) EXPECT_EQ(v, 0.0);
  for (double v : h.tier(Tier::Cell)) EXPECT_EQ(v, 0.0);
}

TEST(Hypergradient, SmallLearningRateApproachesDirect) {
  SmallProblem p = small_problem(2);
  const std::vector<std::size_t> batch{0, 1};
  SearchConfig cfg;
  cfg.lr_weights = 1e-6;
  const ArchParams h = hypergradient(p.state, Tier::Depth, p.tr, batch, p.val, batch, cfg);
  const BatchLoss direct = evaluate_batch(p.state, p.val, batch, cfg.loss);
  const auto d = direct.grad_arch.tier(Tier::Depth);
  const auto hv = h.tier(Tier::Depth);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(hv[i], d[i], 1e-6 * (1.0 + std::abs(d[i])));
}

TEST(SearchConfig, StageEpochsAddUp) {
  SearchConfig cfg;
  EXPECT_EQ(cfg.stage_epochs(), (std::array<std::size_t, 3>{33, 34, 33}));
  cfg.epochs_total = 6;
  EXPECT_EQ(cfg.stage_epochs(), (std::array<std::size_t, 3>{2, 2, 2}));
  cfg.epochs_total = 1;
  const auto e = cfg.stage_epochs();
  EXPECT_EQ(e[0] + e[1] + e[2], 1u);
}

TEST(SearchConfig, Validation) {
  SearchConfig cfg;
  cfg.stage_split = {0.5, 0.5, 0.5};
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.lr_arch = 0.0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.fd_epsilon_scale = -1.0;
  EXPECT_THROW(cfg.validate(), DomainError);
}

TEST(SearchStage, ZeroLengthLeavesState) {
  SmallProblem p = small_problem(3);
  SupernetState s = p.state;
  const StageReport r = search_stage(s, Tier::Width, {}, 0, p.tr, p.val);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(s, p.state);
}

TEST(SearchStage, ReducesTrainingLoss) {
  SmallProblem p = small_problem(4, 4, 12);
  p.state.arch = ArchParams{};
  SearchConfig cfg;
  cfg.lr_weights = 3e-3;
  cfg.lr_arch = 1e-2;
  const double before = dataset_loss(p.state, p.tr, cfg.loss);
  SupernetState s = p.state;
  const StageReport r = search_stage(s, Tier::Width, cfg, 4, p.tr, p.val);
  EXPECT_EQ(r.trace.size(), 8u);
  EXPECT_LT(dataset_loss(s, p.tr, cfg.loss), before);
}

TEST(SearchStage, FrozenTiersUnchanged) {
  SmallProblem p = small_problem(5);
  SupernetState s = p.state;
  freeze(s, Tier::Width);
  freeze(s, Tier::Depth);
  const ArchParams before = s.arch;
  const Selection sel = s.frozen;
  search_stage(s, Tier::Cell, {}, 2, p.tr, p.val);
  for (Tier t : {Tier::Width, Tier::Depth}) {
    const auto a = before.tier(t);
    const auto b = std::as_const(s.arch).tier(t);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  EXPECT_EQ(s.frozen, sel);
  const auto a = before.tier(Tier::Cell);
  const auto b = std::as_const(s.arch).tier(Tier::Cell);
  EXPECT_FALSE(std::equal(a.begin(), a.end(), b.begin()));
  EXPECT_THROW(search_stage(s, Tier::Width, {}, 1, p.tr, p.val), DomainError);
}

TEST(SearchStage, RejectsEmptyData) {
  SmallProblem p = small_problem(6);
  EXPECT_THROW(search_stage(p.state, Tier::Width, {}, 1, {}, p.val), DomainError);
  EXPECT_THROW(run_tiered_search({}, p.tr, {}), DomainError);
}

TEST(TieredSearch, DeterministicAndLegal) {
  SmallProblem p = small_problem(7, 3, 8);
  SearchConfig cfg;
  cfg.epochs_total = 3;
  cfg.seed = 5;
  const SearchReport a = run_tiered_search(cfg, p.tr, p.val);
  const SearchReport b = run_tiered_search(cfg, p.tr, p.val);
  EXPECT_NO_THROW(validate(a.block));
  EXPECT_LE(a.block.branches.size(), kMaxBranches);
  EXPECT_EQ(a.block, b.block);
  EXPECT_EQ(a.arch, b.arch);
  EXPECT_EQ(a.state, b.state);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.stages[i].tier, kTierOrder[i]);
    EXPECT_EQ(a.stages[i].trace.size(), 2u);
    EXPECT_EQ(a.stages[i].trace, b.stages[i].trace);
  }
  EXPECT_EQ(a.merged_kernel_size, merge_block(a.block).kernel_height());
  for (Tier t : kTierOrder) EXPECT_TRUE(a.state.frozen.frozen(t));
  // The frozen hard path is the discretized block.
  const Tensor y = p.tr[0].y;
  const Tensor linear = forward(a.state, y).linear;
  const Tensor merged = conv2d(y, merge_block(a.block));
  EXPECT_LT(max_abs_diff(linear, merged), 1e-10);
}

}  // namespace
}  // namespace relume
