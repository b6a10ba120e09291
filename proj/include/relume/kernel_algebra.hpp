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

// Re-parameterization: collapsing a multi-branch block of linear cells into
// one convolution.
//
// A block is a sum of branches; a branch is a chain of one or two cells; a
// cell is a convolution, a convolution plus identity skip, or a convolution
// followed by average pooling. Every piece is linear and translation
// invariant, so the whole block is one convolution whose kernel is built
// from two rules:
//
//   sequential:  (K2 o K1)  -> full 2-D composition of the weights,
//                              bias2 + sum(W2) * bias1
//   parallel:    (K1 + K2)  -> centre-aligned sum of weights and biases
//
// `evaluate_block` runs the unmerged block directly and is the reference the
// merged kernel is certified against.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relume/conv.hpp"
#include "relume/error.hpp"
#include "relume/field.hpp"
#include "relume/tensor.hpp"

namespace relume {

inline constexpr std::size_t kDefaultChannels = 3;
inline constexpr std::size_t kMaxBranches = 8;
inline constexpr std::size_t kMaxCells = 2;
inline constexpr std::size_t kDefaultPoolWindow = 3;
inline constexpr std::array<std::size_t, 3> kCandidateKernelSizes = {1, 3, 5};

enum class OpKind { StandardConv = 0, ResidualConv = 1, ConvAvgPool = 2 };

inline constexpr std::size_t kOpKindCount = 3;
inline constexpr std::size_t kCandidateOpCount = kOpKindCount * kCandidateKernelSizes.size();

inline std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::StandardConv: return "standard_conv";
    case OpKind::ResidualConv: return "residual_conv";
    case OpKind::ConvAvgPool: return "conv_avg_pool";
  }
  return "unknown";
}

inline OpKind op_kind_from_string(std::string_view s) {
  if (s == "standard_conv") return OpKind::StandardConv;
  if (s == "residual_conv") return OpKind::ResidualConv;
  if (s == "conv_avg_pool") return OpKind::ConvAvgPool;
  throw DomainError("unknown op kind '" + std::string(s) + "'");
}

/// One of the nine candidate operations, indexed kind-major.
struct CandidateOp {
  OpKind kind;
  std::size_t kernel_size;

  static CandidateOp from_index(std::size_t index) {
    if (index >= kCandidateOpCount) throw DomainError("candidate op index out of range");
    return {static_cast<OpKind>(index / kCandidateKernelSizes.size()),
            kCandidateKernelSizes[index % kCandidateKernelSizes.size()]};
  }

  std::size_t index() const {
    auto it = std::find(kCandidateKernelSizes.begin(), kCandidateKernelSizes.end(), kernel_size);
    if (it == kCandidateKernelSizes.end()) {
      throw DomainError("kernel size " + std::to_string(kernel_size) + " is not a candidate");
    }
    return static_cast<std::size_t>(kind) * kCandidateKernelSizes.size() +
           static_cast<std::size_t>(it - kCandidateKernelSizes.begin());
  }
};

struct CellIR {
  OpKind kind = OpKind::StandardConv;
  ConvKernel kernel;
  std::size_t pool_window = kDefaultPoolWindow;

  std::size_t kernel_size() const { return kernel.kernel_height(); }
  friend bool operator==(const CellIR&, const CellIR&) = default;
};

struct BranchIR {
  std::vector<CellIR> cells;
  friend bool operator==(const BranchIR&, const BranchIR&) = default;
};

struct LinearBlockIR {
  std::vector<BranchIR> branches;

  std::size_t channels() const { return branches.at(0).cells.at(0).kernel.in_channels(); }
  friend bool operator==(const LinearBlockIR&, const LinearBlockIR&) = default;
};

/// Throws DomainError describing the first violated structural constraint.
inline void validate(const LinearBlockIR& block) {
  if (block.branches.empty() || block.branches.size() > kMaxBranches) {
    throw DomainError("block must have 1.." + std::to_string(kMaxBranches) + " branches, got " +
                      std::to_string(block.branches.size()));
  }
  const std::size_t channels = block.channels();
  for (std::size_t b = 0; b < block.branches.size(); ++b) {
    const auto& cells = block.branches[b].cells;
    if (cells.empty() || cells.size() > kMaxCells) {
      throw DomainError("branch " + std::to_string(b) + " must have 1.." +
                        std::to_string(kMaxCells) + " cells, got " + std::to_string(cells.size()));
    }
    for (const CellIR& cell : cells) {
      cell.kernel.validate();
      if (cell.kernel.in_channels() != channels) {
        throw ShapeError("in_channels", channels, cell.kernel.in_channels());
      }
      if (cell.kernel.out_channels() != channels) {
        throw ShapeError("out_channels", channels, cell.kernel.out_channels());
      }
      if (cell.kernel.kernel_height() != cell.kernel.kernel_width()) {
        throw ShapeError("kernel_width", cell.kernel.kernel_height(), cell.kernel.kernel_width());
      }
      CandidateOp{cell.kind, cell.kernel_size()}.index();
      if (cell.kind == OpKind::ConvAvgPool) require_odd_window(cell.pool_window);
    }
  }
}

// ---------------------------------------------------------------------------
// Kernel constructors and merge rules

inline ConvKernel pad_kernel(const ConvKernel& k, std::size_t target_kh, std::size_t target_kw) {
  if (target_kh % 2 == 0 || target_kw % 2 == 0) {
    throw DomainError("padded kernel sides must be odd");
  }
  if (target_kh < k.kernel_height() || target_kw < k.kernel_width()) {
    throw DomainError("cannot pad a " + std::to_string(k.kernel_height()) + "x" +
                      std::to_string(k.kernel_width()) + " kernel down to " +
                      std::to_string(target_kh) + "x" + std::to_string(target_kw));
  }
  ConvKernel out(k.out_channels(), k.in_channels(), target_kh, target_kw);
  out.bias = k.bias;
  const std::size_t dy = (target_kh - k.kernel_height()) / 2;
  const std::size_t dx = (target_kw - k.kernel_width()) / 2;
  for (std::size_t o = 0; o < k.out_channels(); ++o)
    for (std::size_t c = 0; c < k.in_channels(); ++c)
      for (std::size_t i = 0; i < k.kernel_height(); ++i)
        for (std::size_t j = 0; j < k.kernel_width(); ++j)
          out.weights.at(o, c, i + dy, j + dx) = k.weights.at(o, c, i, j);
  return out;
}

inline ConvKernel identity_kernel(std::size_t channels, std::size_t kh, std::size_t kw) {
  ConvKernel k(channels, channels, kh, kw);
  for (std::size_t c = 0; c < channels; ++c) k.weights.at(c, c, kh / 2, kw / 2) = 1.0;
  return k;
}

inline ConvKernel avgpool_kernel(std::size_t channels, std::size_t window) {
  require_odd_window(window);
  ConvKernel k(channels, channels, window, window);
  const double v = 1.0 / static_cast<double>(window * window);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < window; ++i)
      for (std::size_t j = 0; j < window; ++j) k.weights.at(c, c, i, j) = v;
  return k;
}

/// Kernel equivalent to applying `first`, then `second`.
inline ConvKernel merge_sequential(const ConvKernel& first, const ConvKernel& second) {
  if (first.out_channels() != second.in_channels()) {
    throw ShapeError("middle_channels", first.out_channels(), second.in_channels());
  }
  const std::size_t O = second.out_channels(), M = second.in_channels(), C = first.in_channels();
  const std::size_t kh1 = first.kernel_height(), kw1 = first.kernel_width();
  const std::size_t kh2 = second.kernel_height(), kw2 = second.kernel_width();
  ConvKernel out(O, C, kh1 + kh2 - 1, kw1 + kw2 - 1);
  for (std::size_t o = 0; o < O; ++o) {
    double b = second.bias[o];
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t v = 0; v < kh2; ++v) {
        for (std::size_t w = 0; w < kw2; ++w) {
          const double w2 = second.weights.at(o, m, v, w);
          if (w2 == 0.0) continue;
          b += w2 * first.bias[m];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh1; ++i)
              for (std::size_t j = 0; j < kw1; ++j)
                out.weights.at(o, c, i + v, j + w) += w2 * first.weights.at(m, c, i, j);
        }
      }
    }
    out.bias[o] = b;
  }
  return out;
}

inline ConvKernel merge_parallel(std::span<const ConvKernel> kernels) {
  if (kernels.empty()) throw DomainError("merge_parallel needs at least one kernel");
  std::size_t kh = 0, kw = 0;
  for (const ConvKernel& k : kernels) {
    if (k.out_channels() != kernels[0].out_channels()) {
      throw ShapeError("out_channels", kernels[0].out_channels(), k.out_channels());
    }
    if (k.in_channels() != kernels[0].in_channels()) {
      throw ShapeError("in_channels", kernels[0].in_channels(), k.in_channels());
    }
    kh = std::max(kh, k.kernel_height());
    kw = std::max(kw, k.kernel_width());
  }
  ConvKernel out(kernels[0].out_channels(), kernels[0].in_channels(), kh, kw);
  for (const ConvKernel& k : kernels) {
    const ConvKernel p = pad_kernel(k, kh, kw);
    axpy(out.weights, 1.0, p.weights);
    for (std::size_t o = 0; o < out.out_channels(); ++o) out.bias[o] += p.bias[o];
  }
  return out;
}

inline ConvKernel merge_parallel(std::initializer_list<ConvKernel> kernels) {
  return merge_parallel(std::span<const ConvKernel>(kernels.begin(), kernels.size()));
}

inline ConvKernel lower_cell(const CellIR& cell) {
  const std::size_t channels = cell.kernel.in_channels();
  switch (cell.kind) {
    case OpKind::StandardConv:
      return cell.kernel;
    case OpKind::ResidualConv:
      return merge_parallel({cell.kernel, identity_kernel(channels, 1, 1)});
    case OpKind::ConvAvgPool:
      return merge_sequential(cell.kernel, avgpool_kernel(cell.kernel.out_channels(), cell.pool_window));
  }
  throw DomainError("unknown op kind");
}

inline ConvKernel merge_branch(const BranchIR& branch) {
  ConvKernel k = lower_cell(branch.cells.at(0));
  for (std::size_t i = 1; i < branch.cells.size(); ++i) k = merge_sequential(k, lower_cell(branch.cells[i]));
  return k;
}

/// The single convolution equivalent to the whole block.
inline ConvKernel merge_block(const LinearBlockIR& block) {
  validate(block);
  std::vector<ConvKernel> merged;
  merged.reserve(block.branches.size());
  for (const BranchIR& b : block.branches) merged.push_back(merge_branch(b));
  return merge_parallel(std::span<const ConvKernel>(merged));
}

// ---------------------------------------------------------------------------
// Reference evaluation of the unmerged block

/// Summed radius of every layer in a cell, pooling included.
inline std::size_t cell_radius(const CellIR& cell) {
  std::size_t r = cell.kernel_size() / 2;
  if (cell.kind == OpKind::ConvAvgPool) r += cell.pool_window / 2;
  return r;
}

inline Field apply_cell(const CellIR& cell, const Field& in) {
  Field out = conv(in, cell.kernel);
  switch (cell.kind) {
    case OpKind::StandardConv:
      break;
    case OpKind::ResidualConv:
      accumulate(out, 1.0, in);
      break;
    case OpKind::ConvAvgPool:
      out = pool(out, cell.pool_window);
      break;
  }
  return out;
}

/// Runs every branch cell by cell and sums them; the linear part of the
/// block on a zero-padded image, without merging anything.
inline Tensor evaluate_block(const LinearBlockIR& block, const Tensor& image) {
  validate(block);
  if (image.channels() != block.channels()) {
    throw ShapeError("channels", block.channels(), image.channels());
  }
  std::size_t margin = 0;
  for (const BranchIR& b : block.branches) {
    std::size_t r = 0;
    for (const CellIR& c : b.cells) r += cell_radius(c);
    margin = std::max(margin, r);
  }
  const Field input = extend(image, margin);
  Field total = zeros_like(input);
  for (const BranchIR& b : block.branches) {
    Field f = input;
    for (const CellIR& c : b.cells) f = apply_cell(c, f);
    accumulate(total, 1.0, f);
  }
  return restrict_to_image(total, margin);
}

}  // namespace relume
