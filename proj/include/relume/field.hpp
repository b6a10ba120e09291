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

// Evaluation of chains of linear layers on the infinite plane.
//
// A zero-padded image seen as a signal on the whole plane stays constant
// per channel far away from the image after any stack of convolutions.
// A Field stores the signal over the image plus a margin, together with that
// far-field constant. Padding each layer's input with its far-field value
// (instead of zeros) keeps every layer exact on the stored window as long as
// the margin covers the summed radius of all layers except the last. Under
// this rule a chain of convolutions evaluated layer by layer matches the
// single merged convolution on the zero-padded image, borders included.

#pragma once

#include <cstddef>
#include <vector>

#include "relume/conv.hpp"
#include "relume/tensor.hpp"

namespace relume {

struct Field {
  Tensor data;
  std::vector<double> far;

  std::size_t channels() const { return data.channels(); }
};

/// Zero-extend an image by `margin` pixels on every side.
inline Field extend(const Tensor& image, std::size_t margin) {
  return {pad(image, margin, margin), std::vector<double>(image.channels(), 0.0)};
}

inline Tensor restrict_to_image(const Field& f, std::size_t margin) {
  return crop(f.data, margin, margin);
}

inline Field zeros_like(const Field& f) {
  return {Tensor(f.data.shape()), std::vector<double>(f.far.size(), 0.0)};
}

/// a += s * b for both the window and the far-field constant.
inline void accumulate(Field& a, double s, const Field& b) {
  axpy(a.data, s, b.data);
  for (std::size_t c = 0; c < a.far.size(); ++c) a.far[c] += s * b.far[c];
}

inline double inner(const Field& a, const Field& b) {
  double s = dot(a.data, b.data);
  for (std::size_t c = 0; c < a.far.size(); ++c) s += a.far[c] * b.far[c];
  return s;
}

inline Field conv(const Field& in, const ConvKernel& k) {
  Field out;
  out.data = conv2d(in.data, k, Padding::constant(in.far));
  out.far.assign(k.out_channels(), 0.0);
  for (std::size_t o = 0; o < k.out_channels(); ++o) {
    double s = k.bias[o];
    for (std::size_t c = 0; c < k.in_channels(); ++c) {
      double taps = 0.0;
      for (std::size_t i = 0; i < k.kernel_height(); ++i) {
        for (std::size_t j = 0; j < k.kernel_width(); ++j) taps += k.weights.at(o, c, i, j);
      }
      s += taps * in.far[c];
    }
    out.far[o] = s;
  }
  return out;
}

struct FieldConvGradients {
  Field input;
  ConvKernel kernel;
};

inline FieldConvGradients conv_backward(const Field& in, const ConvKernel& k, const Field& upstream) {
  ConvGradients g = conv2d_backward(in.data, k, upstream.data, Padding::constant(in.far));
  FieldConvGradients out{{std::move(g.input), std::move(g.padding)}, std::move(g.kernel)};
  // Far-field path: far_out[o] = bias[o] + sum_{c,i,j} W[o,c,i,j] * far_in[c].
  for (std::size_t o = 0; o < k.out_channels(); ++o) {
    const double up = upstream.far[o];
    if (up == 0.0) continue;
    out.kernel.bias[o] += up;
    for (std::size_t c = 0; c < k.in_channels(); ++c) {
      double taps = 0.0;
      for (std::size_t i = 0; i < k.kernel_height(); ++i) {
        for (std::size_t j = 0; j < k.kernel_width(); ++j) {
          out.kernel.weights.at(o, c, i, j) += up * in.far[c];
          taps += k.weights.at(o, c, i, j);
        }
      }
      out.input.far[c] += up * taps;
    }
  }
  return out;
}

inline Field pool(const Field& in, std::size_t window) {
  return {avg_pool(in.data, window, Padding::constant(in.far)), in.far};
}

inline Field pool_backward(const Field& in, std::size_t window, const Field& upstream) {
  auto g = avg_pool_backward(in.data, window, upstream.data, Padding::constant(in.far));
  Field out{std::move(g.input), std::move(g.padding)};
  for (std::size_t c = 0; c < out.far.size(); ++c) out.far[c] += upstream.far[c];
  return out;
}

}  // namespace relume
