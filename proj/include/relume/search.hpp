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

// Three-stage bilevel architecture search: branch gates, then depths, then
// cell ops. Each stage alternates an Adam step on the weights with an Adam
// step on that stage's logits, driven by a one-step hypergradient. The tier
// is snapped to its hard selection when its stage ends.

#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "relume/adam.hpp"
#include "relume/error.hpp"
#include "relume/kernel_algebra.hpp"
#include "relume/losses.hpp"
#include "relume/rng.hpp"
#include "relume/supernet.hpp"
#include "relume/trainer.hpp"

namespace relume {

inline constexpr std::array<Tier, 3> kTierOrder = {Tier::Width, Tier::Depth, Tier::Cell};

struct SearchConfig {
  std::size_t epochs_total = 100;
  std::array<double, 3> stage_split = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double lr_weights = kDefaultWeightLr;
  double lr_arch = kDefaultArchLr;
  double fd_epsilon_scale = 0.01;
  std::size_t batch_size = kDefaultBatchSize;
  std::uint64_t seed = 0;
  bool second_order = true;
  LossConfig loss;
  OutputHead head;

  void validate() const {
    double sum = 0.0;
    for (double f : stage_split) {
      if (!(f >= 0.0)) throw DomainError("stage fractions must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DomainError("stage fractions sum to " + std::to_string(sum));
    if (!(lr_weights > 0.0) || !(lr_arch > 0.0)) throw DomainError("learning rates must be positive");
    if (!(fd_epsilon_scale > 0.0)) throw DomainError("finite-difference scale must be positive");
    if (batch_size == 0) throw DomainError("batch size must be positive");
    loss.validate();
    head.validate();
  }

  /// Epochs per stage; cumulative rounding so they always add to the total.
  std::array<std::size_t, 3> stage_epochs() const {
    std::array<std::size_t, 3> out{};
    double cum = 0.0;
    std::size_t done = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      cum += stage_split[i];
      const auto upto = i == 2 ? epochs_total
                               : static_cast<std::size_t>(std::llround(cum * static_cast<double>(epochs_total)));
      out[i] = upto - done;
      done = upto;
    }
    return out;
  }
};

/// Loss value with gradients for both variable groups.
struct BilevelGrad {
  double value = 0.0;
  std::vector<double> w;
  std::vector<double> a;
};

/// One-step hypergradient for min_a L_val(w*(a), a), w*(a) ~ w - lr grad_w L_tr.
///
///   w'  = w - lr * grad_w L_tr(w, a)
///   h   = grad_a L_val(w', a) - lr * (grad_a L_tr(w+, a) - grad_a L_tr(w-, a)) / (2 eps)
///   w+- = w +- eps * grad_w' L_val,  eps = eps_scale / |grad_w' L_val|
///
/// With `second_order` off this is grad_a L_val(w, a). `train` and `val`
/// map (w, a) to a BilevelGrad.
template <typename TrainFn, typename ValFn>
std::vector<double> one_step_hypergradient(std::span<const double> w, std::span<const double> a, TrainFn&& train,
                                           ValFn&& val, double lr, double eps_scale, bool second_order = true,
                                           double* val_loss = nullptr) {
  auto checked = [](BilevelGrad g, const char* what) {
    if (!std::isfinite(g.value)) throw DivergenceError(std::string("non-finite ") + what + " loss in hypergradient");
    return g;
  };
  std::vector<double> w_eval(w.begin(), w.end());
  if (second_order) {
    const BilevelGrad tr = checked(train(std::span<const double>(w_eval), a), "training");
    for (std::size_t i = 0; i < w_eval.size(); ++i) w_eval[i] -= lr * tr.w[i];
  }
  const BilevelGrad v = checked(val(std::span<const double>(w_eval), a), "validation");
  if (val_loss) *val_loss = v.value;
  std::vector<double> h = v.a;
  if (!second_order || lr == 0.0) return h;

  double norm = 0.0;
  for (double g : v.w) norm += g * g;
  norm = std::sqrt(norm);
  if (norm < 1e-12) return h;
  const double eps = eps_scale / norm;
  std::vector<double> w_plus(w.begin(), w.end()), w_minus(w.begin(), w.end());
  for (std::size_t i = 0; i < w_plus.size(); ++i) {
    w_plus[i] += eps * v.w[i];
    w_minus[i] -= eps * v.w[i];
  }
  const BilevelGrad gp = checked(train(std::span<const double>(w_plus), a), "training");
  const BilevelGrad gm = checked(train(std::span<const double>(w_minus), a), "training");
  for (std::size_t i = 0; i < h.size(); ++i) h[i] -= lr * (gp.a[i] - gm.a[i]) / (2.0 * eps);
  return h;
}

/// Batch objective of `s` with its weights and one tier's logits replaced.
inline BilevelGrad tier_objective(const SupernetState& base, Tier tier, const std::vector<Sample>& data,
                                  std::span<const std::size_t> batch, const LossConfig& cfg,
                                  std::span<const double> w, std::span<const double> a) {
  SupernetState s = base;
  assign(s.weights, w);
  auto dst = s.arch.tier(tier);
  std::copy(a.begin(), a.end(), dst.begin());
  BatchLoss l = evaluate_batch(s, data, batch, cfg);
  const auto ga = l.grad_arch.tier(tier);
  return {l.total, std::move(l.grad_weights), std::vector<double>(ga.begin(), ga.end())};
}

/// Hypergradient over one tier's logits; zeros elsewhere.
inline ArchParams hypergradient(const SupernetState& s, Tier tier, const std::vector<Sample>& data_tr,
                                std::span<const std::size_t> batch_tr, const std::vector<Sample>& data_val,
                                std::span<const std::size_t> batch_val, const SearchConfig& cfg,
                                double* val_loss = nullptr) {
  if (batch_tr.empty() || batch_val.empty()) throw DomainError("hypergradient needs nonempty batches");
  const std::vector<double> w = flatten(s.weights);
  const auto a = s.arch.tier(tier);
  auto train = [&](std::span<const double> ww, std::span<const double> aa) {
    return tier_objective(s, tier, data_tr, batch_tr, cfg.loss, ww, aa);
  };
  auto val = [&](std::span<const double> ww, std::span<const double> aa) {
    return tier_objective(s, tier, data_val, batch_val, cfg.loss, ww, aa);
  };
  const std::vector<double> h =
      one_step_hypergradient(w, a, train, val, cfg.lr_weights, cfg.fd_epsilon_scale, cfg.second_order, val_loss);
  ArchParams out;
  std::copy(h.begin(), h.end(), out.tier(tier).begin());
  return out;
}

struct SearchTraceRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  friend bool operator==(const SearchTraceRow&, const SearchTraceRow&) = default;
};

struct StageReport {
  Tier tier = Tier::Width;
  std::size_t epochs = 0;
  std::vector<SearchTraceRow> trace;
  double seconds = 0.0;
};

/// Runs `epochs` epochs of alternating updates on `tier`. Only the weights
/// and that tier's logits change.
inline StageReport search_stage(SupernetState& s, Tier tier, const SearchConfig& cfg, std::size_t epochs,
                                const std::vector<Sample>& data_tr, const std::vector<Sample>& data_val) {
  cfg.validate();
  if (data_tr.empty() || data_val.empty()) throw DomainError("search needs nonempty train and val sets");
  if (s.frozen.frozen(tier)) throw DomainError("tier '" + std::string(to_string(tier)) + "' is already frozen");
  const auto start = std::chrono::steady_clock::now();
  StageReport report{tier, epochs, {}, 0.0};
  Rng rng = Rng::stream(cfg.seed, "search/" + std::string(to_string(tier)));
  std::vector<double> w = flatten(s.weights);
  AdamState adam_w = AdamState::for_size(w.size(), cfg.lr_weights);
  AdamState adam_a = AdamState::for_size(ArchParams::tier_size(tier), cfg.lr_arch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto tr_batches = epoch_batches(data_tr.size(), cfg.batch_size, rng);
    const auto val_batches = epoch_batches(data_val.size(), cfg.batch_size, rng);
    for (std::size_t i = 0; i < tr_batches.size(); ++i) {
      const BatchLoss l = evaluate_batch(s, data_tr, tr_batches[i], cfg.loss);
      check_divergence(l.total, step);
      adam_step(adam_w, w, l.grad_weights);
      assign(s.weights, w);

      double val_loss = 0.0;
      const ArchParams h =
          hypergradient(s, tier, data_tr, tr_batches[i], data_val, val_batches[i % val_batches.size()], cfg, &val_loss);
      check_divergence(val_loss, step);
      adam_step(adam_a, s.arch.tier(tier), h.tier(tier));
      report.trace.push_back({step, l.total, val_loss});
      ++step;
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

struct SearchReport {
  std::array<StageReport, 3> stages;
  ArchParams arch;
  SupernetState state;  // final weights with every tier frozen
  LinearBlockIR block;
  std::size_t merged_kernel_size = 0;
};

inline SearchReport run_tiered_search(const SearchConfig& cfg, const std::vector<Sample>& data_tr,
                                      const std::vector<Sample>& data_val) {
  cfg.validate();
  if (data_tr.empty() || data_val.empty()) throw DomainError("search needs nonempty train and val sets");
  const std::size_t channels = data_tr.front().y.channels();
  Rng init = Rng::stream(cfg.seed, "init");
  SupernetState s = SupernetState::initialize(init, cfg.head, channels);
  SearchReport report;
  const auto epochs = cfg.stage_epochs();
  for (std::size_t i = 0; i < kTierOrder.size(); ++i) {
    report.stages[i] = search_stage(s, kTierOrder[i], cfg, epochs[i], data_tr, data_val);
    freeze(s, kTierOrder[i]);
  }
  report.arch = s.arch;
  report.block = discretize(s);
  report.merged_kernel_size = merge_block(report.block).kernel_height();
  report.state = std::move(s);
  return report;
}

inline void write_search_log(std::ostream& os, const SearchReport& r) {
  os.precision(17);
  os << "stage,step,train_loss,val_loss\n";
  for (const StageReport& st : r.stages)
    for (const SearchTraceRow& row : st.trace)
      os << to_string(st.tier) << ',' << row.step << ',' << row.train_loss << ',' << row.val_loss << '\n';
}

}  // namespace relume
