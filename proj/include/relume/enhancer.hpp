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

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>

#include "relume/conv.hpp"
#include "relume/error.hpp"
#include "relume/head.hpp"
#include "relume/kernel_algebra.hpp"
#include "relume/tensor.hpp"

namespace relume {

/// Largest merged kernel: two pooled 5x5 cells compose to 13x13.
inline constexpr std::size_t kMaxMergedKernelSize = 13;

/// Deployable enhancer: one convolution, the output head, then x = y / u.
template <typename T>
struct BasicEnhancerModel {
  BasicConvKernel<T> kernel;
  OutputHead head;

  void validate() const {
    kernel.validate();
    if (kernel.out_channels() != kernel.in_channels()) {
      throw ShapeError("out_channels", kernel.in_channels(), kernel.out_channels());
    }
    if (kernel.kernel_height() != kernel.kernel_width()) {
      throw ShapeError("kernel_width", kernel.kernel_height(), kernel.kernel_width());
    }
    if (kernel.kernel_height() > kMaxMergedKernelSize) {
      throw DomainError("kernel side " + std::to_string(kernel.kernel_height()) + " exceeds " +
                        std::to_string(kMaxMergedKernelSize));
    }
    head.validate();
  }

  template <typename U>
  BasicEnhancerModel<U> cast() const {
    return {kernel.template cast<U>(), head};
  }

  friend bool operator==(const BasicEnhancerModel&, const BasicEnhancerModel&) = default;
};

using EnhancerModel = BasicEnhancerModel<double>;
using EnhancerModelF = BasicEnhancerModel<float>;

inline EnhancerModel merge_model(const LinearBlockIR& block, const OutputHead& head = {}) {
  return {merge_block(block), head};
}

template <typename T>
BasicTensor<T> estimate_illumination(const BasicEnhancerModel<T>& m, const BasicTensor<T>& y) {
  if (y.rank() != 3) throw ShapeError("input_rank", 3, y.rank());
  if (y.channels() != m.kernel.in_channels()) throw ShapeError("channels", m.kernel.in_channels(), y.channels());
  return m.head.clamp(m.head.pre_clamp(conv2d(y, m.kernel), y), y);
}

/// x = clamp(y / u, 0, 1). The head and the division run as one pass over
/// the convolution output.
template <typename T>
BasicTensor<T> enhance(const BasicEnhancerModel<T>& m, const BasicTensor<T>& y) {
  if (y.rank() != 3) throw ShapeError("input_rank", 3, y.rank());
  if (y.channels() != m.kernel.in_channels()) throw ShapeError("channels", m.kernel.in_channels(), y.channels());
  BasicTensor<T> x = conv2d(y, m.kernel);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = std::clamp(safe_divide(y[i], m.head.apply(x[i], y[i])), T(0), T(1));
  }
  return x;
}

template <typename T>
std::uint64_t count_params(const BasicEnhancerModel<T>& m) {
  const auto& k = m.kernel;
  return static_cast<std::uint64_t>(k.out_channels()) * k.in_channels() * k.kernel_height() * k.kernel_width() +
         k.out_channels();
}

/// Multiply-accumulates of the convolution alone.
template <typename T>
std::uint64_t count_flops(const BasicEnhancerModel<T>& m, std::uint64_t height, std::uint64_t width) {
  if (height == 0 || width == 0) throw DomainError("image dimensions must be positive");
  const auto& k = m.kernel;
  return static_cast<std::uint64_t>(k.out_channels()) * k.in_channels() * k.kernel_height() * k.kernel_width() *
         height * width;
}

}  // namespace relume
