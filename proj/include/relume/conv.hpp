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

// Stride-1 "same" convolution, LeakyReLU and average pooling, each with an
// analytic backward pass. All composites in the library chain these by hand.

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "relume/error.hpp"
#include "relume/tensor.hpp"

namespace relume {

/// Weights (out x in x kh x kw) and one bias per output channel.
template <typename T>
struct BasicConvKernel {
  BasicTensor<T> weights;
  std::vector<T> bias;

  BasicConvKernel() = default;
  BasicConvKernel(std::size_t out_channels, std::size_t in_channels, std::size_t kh,
                  std::size_t kw)
      : weights({out_channels, in_channels, kh, kw}), bias(out_channels, T(0)) {
    validate();
  }
  BasicConvKernel(BasicTensor<T> w, std::vector<T> b) : weights(std::move(w)), bias(std::move(b)) {
    validate();
  }

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel_height() const { return weights.dim(2); }
  std::size_t kernel_width() const { return weights.dim(3); }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  void validate() const {
    if (weights.rank() != 4) throw ShapeError("kernel_rank", 4, weights.rank());
    if (kernel_height() % 2 == 0 || kernel_width() % 2 == 0) {
      throw DomainError("kernel sides must be odd, got " + std::to_string(kernel_height()) + "x" +
                        std::to_string(kernel_width()));
    }
    if (out_channels() == 0 || in_channels() == 0) throw DomainError("kernel has no channels");
    if (bias.size() != out_channels()) throw ShapeError("bias", out_channels(), bias.size());
  }

  template <typename U>
  BasicConvKernel<U> cast() const {
    return BasicConvKernel<U>(weights.template cast<U>(), std::vector<U>(bias.begin(), bias.end()));
  }

  friend bool operator==(const BasicConvKernel&, const BasicConvKernel&) = default;
};

using ConvKernel = BasicConvKernel<double>;

/// Border value for the input planes. Empty `values` is zero padding;
/// otherwise one constant per input channel.
template <typename T>
struct BasicPadding {
  std::vector<T> values;

  static BasicPadding zero() { return {}; }
  static BasicPadding constant(std::vector<T> v) { return {std::move(v)}; }
  bool is_zero() const { return values.empty(); }
};

using Padding = BasicPadding<double>;

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& in, const BasicConvKernel<T>& k,
                      const BasicPadding<T>& padding = {}) {
  if (in.rank() != 3) throw ShapeError("input_rank", 3, in.rank());
  if (k.in_channels() != in.channels()) throw ShapeError("channels", k.in_channels(), in.channels());
  const std::size_t O = k.out_channels(), C = in.channels();
  const std::size_t H = in.height(), W = in.width();
  const std::size_t kh = k.kernel_height(), kw = k.kernel_width();
  const BasicTensor<T> padded = pad<T>(in, kh / 2, kw / 2, padding.values);
  const std::size_t Wp = padded.width();

  BasicTensor<T> out({O, H, W});
  // Row-major outer loop keeps the accumulator row in cache; each output
  // still sums bias, then (c, i, j) in lexicographic order.
  for (std::size_t o = 0; o < O; ++o) {
    T* dst = out.plane(o);
    for (std::size_t y = 0; y < H; ++y) {
      T* d = dst + y * W;
      std::fill(d, d + W, k.bias[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const T* src_plane = padded.plane(c);
        for (std::size_t i = 0; i < kh; ++i) {
          const T* row = src_plane + (y + i) * Wp;
          for (std::size_t j = 0; j < kw; ++j) {
            const T w = k.weights.at(o, c, i, j);
            if (w == T(0)) continue;
            const T* s = row + j;
            for (std::size_t x = 0; x < W; ++x) d[x] += w * s[x];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct BasicConvGradients {
  BasicTensor<T> input;
  BasicConvKernel<T> kernel;
  /// d/d(padding value) per input channel; zero when padding is zero.
  std::vector<T> padding;
};

using ConvGradients = BasicConvGradients<double>;

namespace detail {
/// Sum of the ring (outside the central H x W) of every plane.
template <typename T>
std::vector<T> ring_sums(const BasicTensor<T>& padded, std::size_t ry, std::size_t rx) {
  const std::size_t Hp = padded.height(), Wp = padded.width();
  std::vector<T> sums(padded.channels(), T(0));
  for (std::size_t c = 0; c < padded.channels(); ++c) {
    const T* p = padded.plane(c);
    T s = 0;
    for (std::size_t y = 0; y < Hp; ++y) {
      const bool row_out = y < ry || y >= Hp - ry;
      for (std::size_t x = 0; x < Wp; ++x) {
        if (row_out || x < rx || x >= Wp - rx) s += p[y * Wp + x];
      }
    }
    sums[c] = s;
  }
  return sums;
}
}  // namespace detail

template <typename T>
BasicConvGradients<T> conv2d_backward(const BasicTensor<T>& in, const BasicConvKernel<T>& k,
                                      const BasicTensor<T>& upstream,
                                      const BasicPadding<T>& padding = {}) {
  if (in.rank() != 3) throw ShapeError("input_rank", 3, in.rank());
  if (k.in_channels() != in.channels()) throw ShapeError("channels", k.in_channels(), in.channels());
  const std::size_t O = k.out_channels(), C = in.channels();
  const std::size_t H = in.height(), W = in.width();
  if (upstream.rank() != 3) throw ShapeError("upstream_rank", 3, upstream.rank());
  if (upstream.channels() != O) throw ShapeError("channels", O, upstream.channels());
  if (upstream.height() != H) throw ShapeError("height", H, upstream.height());
  if (upstream.width() != W) throw ShapeError("width", W, upstream.width());

  const std::size_t kh = k.kernel_height(), kw = k.kernel_width();
  const BasicTensor<T> padded = pad<T>(in, kh / 2, kw / 2, padding.values);
  const std::size_t Wp = padded.width();
  BasicTensor<T> grad_padded(padded.shape());

  BasicConvGradients<T> g;
  g.kernel = BasicConvKernel<T>(O, C, kh, kw);
  for (std::size_t o = 0; o < O; ++o) {
    const T* up = upstream.plane(o);
    T b = 0;
    for (std::size_t p = 0; p < H * W; ++p) b += up[p];
    g.kernel.bias[o] = b;
    for (std::size_t c = 0; c < C; ++c) {
      const T* src_plane = padded.plane(c);
      T* gp_plane = grad_padded.plane(c);
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const T w = k.weights.at(o, c, i, j);
          T dw = 0;
          for (std::size_t y = 0; y < H; ++y) {
            const T* u = up + y * W;
            const T* s = src_plane + (y + i) * Wp + j;
            T* gp = gp_plane + (y + i) * Wp + j;
            for (std::size_t x = 0; x < W; ++x) {
              dw += u[x] * s[x];
              gp[x] += w * u[x];
            }
          }
          g.kernel.weights.at(o, c, i, j) = dw;
        }
      }
    }
  }
  g.input = crop(grad_padded, kh / 2, kw / 2);
  if (padding.is_zero()) {
    g.padding.assign(C, T(0));
  } else {
    g.padding = detail::ring_sums(grad_padded, kh / 2, kw / 2);
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& in, T slope) {
  BasicTensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= T(0) ? in[i] : slope * in[i];
  return out;
}

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& in, T slope, const BasicTensor<T>& upstream) {
  require_same_shape(in, upstream);
  BasicTensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= T(0) ? upstream[i] : slope * upstream[i];
  return out;
}

// ---------------------------------------------------------------------------

inline void require_odd_window(std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw DomainError("pooling window must be odd, got " + std::to_string(window));
  }
}

/// Stride-1 mean over a window x window neighbourhood of the padded input.
template <typename T>
BasicTensor<T> avg_pool(const BasicTensor<T>& in, std::size_t window,
                        const BasicPadding<T>& padding = {}) {
  require_odd_window(window);
  if (in.rank() != 3) throw ShapeError("input_rank", 3, in.rank());
  const std::size_t C = in.channels(), H = in.height(), W = in.width();
  const std::size_t r = window / 2;
  const BasicTensor<T> padded = pad<T>(in, r, r, padding.values);
  const std::size_t Wp = padded.width();
  const T inv = T(1) / static_cast<T>(window * window);
  BasicTensor<T> out({C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    const T* src = padded.plane(c);
    T* dst = out.plane(c);
    for (std::size_t i = 0; i < window; ++i) {
      for (std::size_t j = 0; j < window; ++j) {
        for (std::size_t y = 0; y < H; ++y) {
          T* d = dst + y * W;
          const T* s = src + (y + i) * Wp + j;
          for (std::size_t x = 0; x < W; ++x) d[x] += inv * s[x];
        }
      }
    }
  }
  return out;
}

template <typename T>
struct BasicPoolGradients {
  BasicTensor<T> input;
  std::vector<T> padding;
};

template <typename T>
BasicPoolGradients<T> avg_pool_backward(const BasicTensor<T>& in, std::size_t window,
                                        const BasicTensor<T>& upstream,
                                        const BasicPadding<T>& padding = {}) {
  require_odd_window(window);
  require_same_shape(in, upstream);
  const std::size_t C = in.channels(), H = in.height(), W = in.width();
  const std::size_t r = window / 2;
  const std::size_t Wp = W + 2 * r;
  const T inv = T(1) / static_cast<T>(window * window);
  BasicTensor<T> grad_padded({C, H + 2 * r, Wp});
  for (std::size_t c = 0; c < C; ++c) {
    const T* up = upstream.plane(c);
    T* gp_plane = grad_padded.plane(c);
    for (std::size_t i = 0; i < window; ++i) {
      for (std::size_t j = 0; j < window; ++j) {
        for (std::size_t y = 0; y < H; ++y) {
          const T* u = up + y * W;
          T* gp = gp_plane + (y + i) * Wp + j;
          for (std::size_t x = 0; x < W; ++x) gp[x] += inv * u[x];
        }
      }
    }
  }
  BasicPoolGradients<T> g;
  g.input = crop(grad_padded, r, r);
  if (padding.is_zero()) {
    g.padding.assign(C, T(0));
  } else {
    if (padding.values.size() != C) throw ShapeError("padding_values", C, padding.values.size());
    g.padding = detail::ring_sums(grad_padded, r, r);
  }
  return g;
}

}  // namespace relume
