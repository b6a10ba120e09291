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

// Continuously relaxed multi-branch block used during architecture search.
//
//   cell(x)    = sum_k softmax(alpha_c)[k] * op_k(x)           (9 candidates)
//   branch(y)  = p1 * cell1(y) + p2 * cell2(cell1(y))           (p = softmax(alpha_d))
//   linear(y)  = sum_b sigmoid(alpha_w[b]) * branch_b(y)        (8 slots)
//   u          = head(linear(y), y)
//
// Once a tier is frozen its relaxation is replaced by the hard selection
// (gates 0/1, one-hot depth or op), which is also how a discretized block is
// trained. All linear content is evaluated on Fields so that the hard path
// matches the merged convolution exactly.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relume/error.hpp"
#include "relume/field.hpp"
#include "relume/head.hpp"
#include "relume/kernel_algebra.hpp"
#include "relume/rng.hpp"
#include "relume/tensor.hpp"

namespace relume {

enum class Tier { Width, Depth, Cell };

inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::Width: return "width";
    case Tier::Depth: return "depth";
    case Tier::Cell: return "cell";
  }
  return "unknown";
}

/// Architecture logits for the three tiers, stored flat:
/// [width: 8 | depth: 8 x 2 | cell: 8 x 2 x 9].
class ArchParams {
 public:
  static constexpr std::size_t kWidthSize = kMaxBranches;
  static constexpr std::size_t kDepthSize = kMaxBranches * kMaxCells;
  static constexpr std::size_t kCellSize = kMaxBranches * kMaxCells * kCandidateOpCount;
  static constexpr std::size_t kSize = kWidthSize + kDepthSize + kCellSize;

  ArchParams() : logits_(kSize, 0.0) {}

  double& width(std::size_t b) { return logits_[b]; }
  double width(std::size_t b) const { return logits_[b]; }
  double& depth(std::size_t b, std::size_t d) { return logits_[kWidthSize + b * kMaxCells + d]; }
  double depth(std::size_t b, std::size_t d) const { return logits_[kWidthSize + b * kMaxCells + d]; }
  double& cell(std::size_t b, std::size_t c, std::size_t op) { return logits_[cell_offset(b, c) + op]; }
  double cell(std::size_t b, std::size_t c, std::size_t op) const { return logits_[cell_offset(b, c) + op]; }

  std::span<double> values() { return logits_; }
  std::span<const double> values() const { return logits_; }

  static std::size_t tier_offset(Tier t) {
    switch (t) {
      case Tier::Width: return 0;
      case Tier::Depth: return kWidthSize;
      case Tier::Cell: return kWidthSize + kDepthSize;
    }
    return 0;
  }
  static std::size_t tier_size(Tier t) {
    switch (t) {
      case Tier::Width: return kWidthSize;
      case Tier::Depth: return kDepthSize;
      case Tier::Cell: return kCellSize;
    }
    return 0;
  }
  std::span<double> tier(Tier t) { return values().subspan(tier_offset(t), tier_size(t)); }
  std::span<const double> tier(Tier t) const { return values().subspan(tier_offset(t), tier_size(t)); }

  static std::size_t cell_offset(std::size_t b, std::size_t c) {
    return kWidthSize + kDepthSize + (b * kMaxCells + c) * kCandidateOpCount;
  }

  friend bool operator==(const ArchParams&, const ArchParams&) = default;

 private:
  std::vector<double> logits_;
};

/// Hard choices of the tiers that have been frozen.
struct Selection {
  std::optional<std::array<bool, kMaxBranches>> branches;
  std::optional<std::array<std::size_t, kMaxBranches>> depths;  // 1 or 2
  std::optional<std::array<std::array<std::size_t, kMaxCells>, kMaxBranches>> ops;

  bool frozen(Tier t) const {
    switch (t) {
      case Tier::Width: return branches.has_value();
      case Tier::Depth: return depths.has_value();
      case Tier::Cell: return ops.has_value();
    }
    return false;
  }
  friend bool operator==(const Selection&, const Selection&) = default;
};

inline constexpr double kInitWeightStd = 0.1;

struct SupernetState {
  ArchParams arch;
  /// One kernel per (branch, cell, candidate op); see kernel_index().
  std::vector<ConvKernel> weights;
  Selection frozen;
  OutputHead head;
  std::size_t channels = kDefaultChannels;
  std::size_t pool_window = kDefaultPoolWindow;

  static constexpr std::size_t kKernelCount = kMaxBranches * kMaxCells * kCandidateOpCount;

  static std::size_t kernel_index(std::size_t b, std::size_t cell, std::size_t op) {
    return (b * kMaxCells + cell) * kCandidateOpCount + op;
  }
  ConvKernel& kernel(std::size_t b, std::size_t cell, std::size_t op) { return weights[kernel_index(b, cell, op)]; }
  const ConvKernel& kernel(std::size_t b, std::size_t cell, std::size_t op) const {
    return weights[kernel_index(b, cell, op)];
  }

  /// Zero-filled kernels of the right sizes.
  static SupernetState zeros(OutputHead head = {}, std::size_t channels = kDefaultChannels) {
    SupernetState s;
    s.head = head;
    s.channels = channels;
    s.weights.reserve(kKernelCount);
    for (std::size_t i = 0; i < kKernelCount; ++i) {
      const std::size_t size = CandidateOp::from_index(i % kCandidateOpCount).kernel_size;
      s.weights.emplace_back(channels, channels, size, size);
    }
    return s;
  }

  /// Logits at zero; weights N(0, 0.1); biases zero.
  static SupernetState initialize(Rng& rng, OutputHead head = {}, std::size_t channels = kDefaultChannels) {
    SupernetState s = zeros(head, channels);
    for (ConvKernel& k : s.weights)
      for (double& w : k.weights.values()) w = rng.normal(0.0, kInitWeightStd);
    return s;
  }

  friend bool operator==(const SupernetState&, const SupernetState&) = default;
};

// ---------------------------------------------------------------------------
// Parameter vectors

inline std::size_t weight_count(const std::vector<ConvKernel>& ks) {
  std::size_t n = 0;
  for (const ConvKernel& k : ks) n += k.parameter_count();
  return n;
}

inline std::vector<double> flatten(const std::vector<ConvKernel>& ks) {
  std::vector<double> out;
  out.reserve(weight_count(ks));
  for (const ConvKernel& k : ks) {
    out.insert(out.end(), k.weights.values().begin(), k.weights.values().end());
    out.insert(out.end(), k.bias.begin(), k.bias.end());
  }
  return out;
}

inline void assign(std::vector<ConvKernel>& ks, std::span<const double> flat) {
  if (flat.size() != weight_count(ks)) throw ShapeError("weight_vector", weight_count(ks), flat.size());
  std::size_t pos = 0;
  for (ConvKernel& k : ks) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), k.weights.size(), k.weights.values().begin());
    pos += k.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), k.bias.size(), k.bias.begin());
    pos += k.bias.size();
  }
}

// ---------------------------------------------------------------------------
// Mixing coefficients

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

template <std::size_t N>
std::array<double, N> softmax(const std::array<double, N>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::array<double, N> p{};
  double s = 0.0;
  for (std::size_t i = 0; i < N; ++i) s += (p[i] = std::exp(logits[i] - m));
  for (double& v : p) v /= s;
  return p;
}

/// d/dlogit of softmax given dL/dp.
template <std::size_t N>
std::array<double, N> softmax_backward(const std::array<double, N>& p, const std::array<double, N>& grad_p) {
  double dotp = 0.0;
  for (std::size_t i = 0; i < N; ++i) dotp += p[i] * grad_p[i];
  std::array<double, N> g{};
  for (std::size_t i = 0; i < N; ++i) g[i] = p[i] * (grad_p[i] - dotp);
  return g;
}

template <std::size_t N>
std::size_t argmax(const std::array<double, N>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Mixing {
  std::array<double, kMaxBranches> gate{};
  std::array<std::array<double, kMaxCells>, kMaxBranches> depth{};
  std::array<std::array<std::array<double, kCandidateOpCount>, kMaxCells>, kMaxBranches> op{};
};

inline std::array<double, kMaxCells> depth_logits(const ArchParams& a, std::size_t b) {
  return {a.depth(b, 0), a.depth(b, 1)};
}

inline std::array<double, kCandidateOpCount> cell_logits(const ArchParams& a, std::size_t b, std::size_t c) {
  std::array<double, kCandidateOpCount> out{};
  for (std::size_t k = 0; k < kCandidateOpCount; ++k) out[k] = a.cell(b, c, k);
  return out;
}

inline Mixing mixing(const SupernetState& s) {
  Mixing m;
  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    m.gate[b] = s.frozen.branches ? ((*s.frozen.branches)[b] ? 1.0 : 0.0) : sigmoid(s.arch.width(b));
    if (s.frozen.depths) {
      m.depth[b] = {0.0, 0.0};
      m.depth[b][(*s.frozen.depths)[b] - 1] = 1.0;
    } else {
      m.depth[b] = softmax(depth_logits(s.arch, b));
    }
    for (std::size_t c = 0; c < kMaxCells; ++c) {
      if (s.frozen.ops) {
        m.op[b][c].fill(0.0);
        m.op[b][c][(*s.frozen.ops)[b][c]] = 1.0;
      } else {
        m.op[b][c] = softmax(cell_logits(s.arch, b, c));
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct OpTrace {
  bool active = false;
  Field output;
  Field conv_output;  // pre-pool value for ConvAvgPool
};

struct CellTrace {
  bool active = false;
  Field input;
  Field output;
  std::array<OpTrace, kCandidateOpCount> ops;
};

struct BranchTrace {
  bool active = false;
  std::array<CellTrace, kMaxCells> cells;
  Field output;
};

struct SupernetCache {
  std::uint64_t fingerprint = 0;
  std::size_t margin = 0;
  Mixing mix;
  Tensor input;
  Tensor linear;
  std::array<BranchTrace, kMaxBranches> branches;
};

struct SupernetOutput {
  Tensor linear;  // block output before the head
  Tensor u_raw;   // leaky_relu(linear) + y
  Tensor u;       // clamped illumination
};

struct SupernetGradients {
  std::vector<ConvKernel> weights;
  ArchParams arch;
};

class StaleCacheError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::uint64_t fingerprint(const SupernetState& s) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const ConvKernel& k : s.weights) {
    mix_bytes(k.weights.data(), k.weights.size() * sizeof(double));
    mix_bytes(k.bias.data(), k.bias.size() * sizeof(double));
  }
  mix_bytes(s.arch.values().data(), s.arch.values().size() * sizeof(double));
  const Mixing m = mixing(s);
  mix_bytes(&m, sizeof(m));
  return h;
}

inline std::size_t op_radius(const SupernetState& s, std::size_t op) {
  const CandidateOp c = CandidateOp::from_index(op);
  return c.kernel_size / 2 + (c.kind == OpKind::ConvAvgPool ? s.pool_window / 2 : 0);
}

inline Field apply_op(const SupernetState& s, const ConvKernel& k, std::size_t op, const Field& in,
                      OpTrace& trace) {
  const OpKind kind = CandidateOp::from_index(op).kind;
  Field out = conv(in, k);
  if (kind == OpKind::ResidualConv) accumulate(out, 1.0, in);
  if (kind == OpKind::ConvAvgPool) {
    trace.conv_output = std::move(out);
    out = pool(trace.conv_output, s.pool_window);
  }
  return out;
}

/// Returns d/d(input) and accumulates into the kernel gradient.
inline Field apply_op_backward(const SupernetState& s, const ConvKernel& k, std::size_t op, const Field& in,
                               const OpTrace& trace, const Field& grad_out, ConvKernel& grad_kernel) {
  const OpKind kind = CandidateOp::from_index(op).kind;
  Field grad_conv = kind == OpKind::ConvAvgPool ? pool_backward(trace.conv_output, s.pool_window, grad_out)
                                                : grad_out;
  FieldConvGradients g = conv_backward(in, k, grad_conv);
  axpy(grad_kernel.weights, 1.0, g.kernel.weights);
  for (std::size_t o = 0; o < grad_kernel.bias.size(); ++o) grad_kernel.bias[o] += g.kernel.bias[o];
  if (kind == OpKind::ResidualConv) accumulate(g.input, 1.0, grad_out);
  return std::move(g.input);
}

}  // namespace detail

/// Summed radius of the widest op that can be active in any depth-2 chain.
inline std::size_t required_margin(const SupernetState& s, const Mixing& m) {
  std::size_t margin = 0;
  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    if (m.gate[b] == 0.0) continue;
    std::size_t r = 0;
    const std::size_t cells = m.depth[b][1] != 0.0 ? 2 : 1;
    for (std::size_t c = 0; c < cells; ++c) {
      std::size_t widest = 0;
      for (std::size_t k = 0; k < kCandidateOpCount; ++k)
        if (m.op[b][c][k] != 0.0) widest = std::max(widest, detail::op_radius(s, k));
      r += widest;
    }
    margin = std::max(margin, r);
  }
  return margin;
}

inline SupernetOutput forward(const SupernetState& s, const Tensor& y, SupernetCache* cache = nullptr) {
  if (y.rank() != 3) throw ShapeError("input_rank", 3, y.rank());
  if (y.channels() != s.channels) throw ShapeError("channels", s.channels, y.channels());
  const Mixing m = mixing(s);
  const std::size_t margin = required_margin(s, m);
  const Field input = extend(y, margin);
  Field total = zeros_like(input);

  SupernetCache local;
  SupernetCache& c = cache ? *cache : local;
  c = SupernetCache{};
  c.mix = m;
  c.margin = margin;

  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    if (m.gate[b] == 0.0) continue;
    BranchTrace& bt = c.branches[b];
    bt.active = true;
    bt.output = zeros_like(input);
    const std::size_t cells = m.depth[b][1] != 0.0 ? 2 : 1;
    const Field* cell_in = &input;
    for (std::size_t cell = 0; cell < cells; ++cell) {
      CellTrace& ct = bt.cells[cell];
      ct.active = true;
      ct.input = *cell_in;
      ct.output = zeros_like(input);
      for (std::size_t k = 0; k < kCandidateOpCount; ++k) {
        const double p = m.op[b][cell][k];
        if (p == 0.0) continue;
        OpTrace& ot = ct.ops[k];
        ot.active = true;
        ot.output = detail::apply_op(s, s.kernel(b, cell, k), k, ct.input, ot);
        accumulate(ct.output, p, ot.output);
      }
      if (m.depth[b][cell] != 0.0) accumulate(bt.output, m.depth[b][cell], ct.output);
      cell_in = &ct.output;
    }
    accumulate(total, m.gate[b], bt.output);
  }

  SupernetOutput out;
  out.linear = restrict_to_image(total, margin);
  out.u_raw = s.head.pre_clamp(out.linear, y);
  out.u = s.head.clamp(out.u_raw, y);
  if (cache) {
    c.fingerprint = detail::fingerprint(s);
    c.input = y;
    c.linear = out.linear;
  } else {
    // Drop the traces of the local cache promptly.
    local = SupernetCache{};
  }
  return out;
}

/// Exact gradients of <grad_u_raw, u_raw> with respect to every kernel and
/// every architecture logit that is not frozen.
inline SupernetGradients backward(const SupernetState& s, const SupernetCache& c, const Tensor& grad_u_raw) {
  if (c.fingerprint != detail::fingerprint(s)) {
    throw StaleCacheError("supernet cache does not belong to this state");
  }
  require_same_shape(grad_u_raw, c.linear);
  SupernetGradients g;
  g.weights = SupernetState::zeros(s.head, s.channels).weights;
  const Mixing& m = c.mix;

  const Tensor grad_linear = s.head.backward(c.linear, grad_u_raw);
  const Field grad_total{pad(grad_linear, c.margin, c.margin), std::vector<double>(s.channels, 0.0)};

  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    const BranchTrace& bt = c.branches[b];
    if (!bt.active) continue;
    if (!s.frozen.branches) {
      const double gate = m.gate[b];
      g.arch.width(b) = inner(grad_total, bt.output) * gate * (1.0 - gate);
    }
    Field grad_branch = zeros_like(grad_total);
    accumulate(grad_branch, m.gate[b], grad_total);

    const std::size_t cells = bt.cells[1].active ? 2 : 1;
    std::array<double, kMaxCells> grad_depth{};
    for (std::size_t cell = 0; cell < cells; ++cell) grad_depth[cell] = inner(grad_branch, bt.cells[cell].output);
    if (!s.frozen.depths) {
      const auto gl = softmax_backward(m.depth[b], grad_depth);
      for (std::size_t d = 0; d < kMaxCells; ++d) g.arch.depth(b, d) = gl[d];
    }

    // Walk the chain backwards; grad_cell accumulates dL/d(cell output).
    Field grad_next = zeros_like(grad_total);
    for (std::size_t cell = cells; cell-- > 0;) {
      const CellTrace& ct = bt.cells[cell];
      Field grad_cell = std::move(grad_next);
      accumulate(grad_cell, m.depth[b][cell], grad_branch);
      grad_next = zeros_like(grad_total);
      std::array<double, kCandidateOpCount> grad_p{};
      for (std::size_t k = 0; k < kCandidateOpCount; ++k) {
        const OpTrace& ot = ct.ops[k];
        if (!ot.active) continue;
        grad_p[k] = inner(grad_cell, ot.output);
        Field grad_op = zeros_like(grad_total);
        accumulate(grad_op, m.op[b][cell][k], grad_cell);
        Field grad_in = detail::apply_op_backward(s, s.kernel(b, cell, k), k, ct.input, ot, grad_op,
                                                  g.weights[SupernetState::kernel_index(b, cell, k)]);
        if (cell > 0) accumulate(grad_next, 1.0, grad_in);
      }
      if (!s.frozen.ops) {
        const auto gl = softmax_backward(m.op[b][cell], grad_p);
        for (std::size_t k = 0; k < kCandidateOpCount; ++k) g.arch.cell(b, cell, k) = gl[k];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Discretization

/// Branches whose gate exceeds 0.5, or the single strongest one if none do.
inline std::array<bool, kMaxBranches> select_branches(const ArchParams& a) {
  std::array<bool, kMaxBranches> keep{};
  bool any = false;
  std::size_t best = 0;
  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    keep[b] = sigmoid(a.width(b)) > 0.5;
    any = any || keep[b];
    if (a.width(b) > a.width(best)) best = b;
  }
  if (!any) keep[best] = true;
  return keep;
}

inline std::array<std::size_t, kMaxBranches> select_depths(const ArchParams& a) {
  std::array<std::size_t, kMaxBranches> d{};
  for (std::size_t b = 0; b < kMaxBranches; ++b) d[b] = argmax(depth_logits(a, b)) + 1;
  return d;
}

inline std::array<std::array<std::size_t, kMaxCells>, kMaxBranches> select_ops(const ArchParams& a) {
  std::array<std::array<std::size_t, kMaxCells>, kMaxBranches> ops{};
  for (std::size_t b = 0; b < kMaxBranches; ++b)
    for (std::size_t c = 0; c < kMaxCells; ++c) ops[b][c] = argmax(cell_logits(a, b, c));
  return ops;
}

/// Replace a tier's relaxation by its current hard selection.
inline void freeze(SupernetState& s, Tier t) {
  switch (t) {
    case Tier::Width: s.frozen.branches = select_branches(s.arch); break;
    case Tier::Depth: s.frozen.depths = select_depths(s.arch); break;
    case Tier::Cell: s.frozen.ops = select_ops(s.arch); break;
  }
}

/// Freeze every tier that is still relaxed.
inline SupernetState harden(SupernetState s) {
  for (Tier t : {Tier::Width, Tier::Depth, Tier::Cell})
    if (!s.frozen.frozen(t)) freeze(s, t);
  return s;
}

inline LinearBlockIR discretize(const SupernetState& state) {
  const SupernetState s = harden(state);
  LinearBlockIR ir;
  for (std::size_t b = 0; b < kMaxBranches; ++b) {
    if (!(*s.frozen.branches)[b]) continue;
    BranchIR branch;
    for (std::size_t c = 0; c < (*s.frozen.depths)[b]; ++c) {
      const std::size_t op = (*s.frozen.ops)[b][c];
      branch.cells.push_back({CandidateOp::from_index(op).kind, s.kernel(b, c, op), s.pool_window});
    }
    ir.branches.push_back(std::move(branch));
  }
  return ir;
}

/// A fully frozen supernet whose hard path is exactly `ir`.
inline SupernetState from_ir(const LinearBlockIR& ir, OutputHead head = {}) {
  validate(ir);
  SupernetState s = SupernetState::zeros(head, ir.channels());
  std::array<bool, kMaxBranches> keep{};
  std::array<std::size_t, kMaxBranches> depths;
  depths.fill(1);
  std::array<std::array<std::size_t, kMaxCells>, kMaxBranches> ops{};
  for (std::size_t b = 0; b < ir.branches.size(); ++b) {
    keep[b] = true;
    depths[b] = ir.branches[b].cells.size();
    for (std::size_t c = 0; c < ir.branches[b].cells.size(); ++c) {
      const CellIR& cell = ir.branches[b].cells[c];
      if (cell.kind == OpKind::ConvAvgPool && cell.pool_window != s.pool_window) {
        throw DomainError("supernet pool window is " + std::to_string(s.pool_window) + ", block uses " +
                          std::to_string(cell.pool_window));
      }
      const std::size_t op = CandidateOp{cell.kind, cell.kernel_size()}.index();
      ops[b][c] = op;
      s.kernel(b, c, op) = cell.kernel;
    }
  }
  s.frozen.branches = keep;
  s.frozen.depths = depths;
  s.frozen.ops = ops;
  return s;
}

}  // namespace relume
