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

// Mini-batch training of the block weights under the unsupervised objective.
// Losses are taken on the pre-clamp illumination u_raw so that saturated
// pixels still pass gradient.

#pragma once

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

namespace relume {

inline constexpr double kDivergenceLimit = 1e6;
inline constexpr double kDefaultWeightLr = 3e-4;
inline constexpr double kDefaultArchLr = 1e-3;
inline constexpr std::size_t kDefaultBatchSize = 2;

/// A training image with its smoothness weights precomputed.
struct Sample {
  Tensor y;
  EdgeWeights weights;
};

inline std::vector<Sample> make_samples(const std::vector<Tensor>& images, const LossConfig& cfg = {}) {
  std::vector<Sample> out;
  out.reserve(images.size());
  for (const Tensor& y : images) out.push_back({y, smoothness_weights(y, cfg)});
  return out;
}

struct BatchLoss {
  double fidelity = 0.0;
  double smooth = 0.0;
  double total = 0.0;
  std::vector<double> grad_weights;  // flattened like flatten(state.weights)
  ArchParams grad_arch;
};

/// Mean loss over `batch` and, when asked, its gradients. Per-image
/// contributions are reduced in batch order.
inline BatchLoss evaluate_batch(const SupernetState& s, const std::vector<Sample>& data,
                                std::span<const std::size_t> batch, const LossConfig& cfg, bool with_grad = true) {
  if (batch.empty()) throw DomainError("empty batch");
  BatchLoss out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (with_grad) out.grad_weights.assign(weight_count(s.weights), 0.0);
  for (std::size_t idx : batch) {
    const Sample& sample = data.at(idx);
    SupernetCache cache;
    const SupernetOutput o = forward(s, sample.y, with_grad ? &cache : nullptr);
    LossBreakdown l = total_loss(o.u_raw, sample.y, sample.weights, cfg);
    out.fidelity += inv * l.fidelity;
    out.smooth += inv * l.smooth;
    out.total += inv * l.total;
    if (!with_grad) continue;
    const SupernetGradients g = backward(s, cache, l.grad);
    const std::vector<double> gw = flatten(g.weights);
    for (std::size_t i = 0; i < gw.size(); ++i) out.grad_weights[i] += inv * gw[i];
    const auto ga = g.arch.values();
    auto dst = out.grad_arch.values();
    for (std::size_t i = 0; i < ga.size(); ++i) dst[i] += inv * ga[i];
  }
  return out;
}

inline void check_divergence(double loss, std::size_t step) {
  if (!std::isfinite(loss) || loss > kDivergenceLimit) {
    throw DivergenceError("loss " + std::to_string(loss) + " at step " + std::to_string(step) + " exceeds " +
                          std::to_string(kDivergenceLimit));
  }
}

/// Index batches of one epoch: a seeded permutation cut into chunks.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return batches;
}

struct TraceRow {
  std::size_t step = 0;
  double fidelity = 0.0;
  double smooth = 0.0;
  double total = 0.0;
  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

using LossTrace = std::vector<TraceRow>;

inline void write_trace_csv(std::ostream& os, const LossTrace& trace) {
  os << "step,L_fid,L_smooth,L_total\n";
  os.precision(17);
  for (const TraceRow& r : trace) os << r.step << ',' << r.fidelity << ',' << r.smooth << ',' << r.total << '\n';
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = kDefaultBatchSize;
  double lr = kDefaultWeightLr;
  std::uint64_t seed = 0;
  LossConfig loss;

  void validate() const {
    if (batch_size == 0) throw DomainError("batch size must be positive");
    if (!(lr > 0.0)) throw DomainError("learning rate must be positive");
    loss.validate();
  }
};

/// Adam on the kernel weights of `s` with the architecture held fixed.
/// Each trace row is the batch loss seen before that step's update.
inline LossTrace train_fixed(SupernetState& s, const std::vector<Sample>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DomainError("training set is empty");
  Rng rng = Rng::stream(cfg.seed, "shuffle");
  std::vector<double> w = flatten(s.weights);
  AdamState adam = AdamState::for_size(w.size(), cfg.lr);
  LossTrace trace;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(data.size(), cfg.batch_size, rng)) {
      const BatchLoss l = evaluate_batch(s, data, batch, cfg.loss);
      check_divergence(l.total, step);
      trace.push_back({step, l.fidelity, l.smooth, l.total});
      adam_step(adam, w, l.grad_weights);
      assign(s.weights, w);
      ++step;
    }
  }
  return trace;
}

struct TrainedBlock {
  LinearBlockIR block;
  LossTrace trace;
};

inline TrainedBlock train_fixed(const LinearBlockIR& block, const std::vector<Sample>& data, const TrainConfig& cfg,
                                const OutputHead& head = {}) {
  SupernetState s = from_ir(block, head);
  LossTrace trace = train_fixed(s, data, cfg);
  return {discretize(s), std::move(trace)};
}

/// Mean loss over a whole dataset (no gradients).
inline double dataset_loss(const SupernetState& s, const std::vector<Sample>& data, const LossConfig& cfg) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate_batch(s, data, all, cfg, false).total;
}

/// Fresh weights for every cell of `block`, drawn like the supernet's.
inline LinearBlockIR reinitialize(LinearBlockIR block, Rng& rng) {
  for (BranchIR& b : block.branches)
    for (CellIR& c : b.cells) {
      for (double& v : c.kernel.weights.values()) v = rng.normal(0.0, kInitWeightStd);
      for (double& v : c.kernel.bias) v = 0.0;
    }
  return block;
}

/// One branch holding a single standard k x k convolution.
inline LinearBlockIR plain_block(std::size_t kernel_size = 3, std::size_t channels = kDefaultChannels) {
  LinearBlockIR block;
  block.branches.push_back(
      {{CellIR{OpKind::StandardConv, ConvKernel(channels, channels, kernel_size, kernel_size), kDefaultPoolWindow}}});
  return block;
}

}  // namespace relume
