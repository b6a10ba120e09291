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

// Dense row-major tensors and the elementwise suite.
//
// Images are rank 3 (channels x height x width); convolution weights are
// rank 4 (out x in x kh x kw). Everything the trainer touches is double;
// the float instantiation exists for the inference benchmark.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relume/error.hpp"

namespace relume {

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  BasicTensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("element_count", element_count(shape_), data_.size());
    }
  }

  static BasicTensor image(std::size_t channels, std::size_t height, std::size_t width,
                           T fill = T(0)) {
    return BasicTensor({channels, height, width}, fill);
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  // Rank-3 accessors.
  std::size_t channels() const { return shape_.at(0); }
  std::size_t height() const { return shape_.at(rank() - 2); }
  std::size_t width() const { return shape_.at(rank() - 1); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  T& at(std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
    return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }
  const T& at(std::size_t o, std::size_t c, std::size_t i, std::size_t j) const {
    return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }

  /// Pointer to the first element of plane `c` of a rank-3 tensor.
  T* plane(std::size_t c) { return data_.data() + c * shape_[1] * shape_[2]; }
  const T* plane(std::size_t c) const { return data_.data() + c * shape_[1] * shape_[2]; }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != b.rank()) throw ShapeError("rank", a.rank(), b.rank());
  static constexpr const char* kImageDims[] = {"channels", "height", "width"};
  static constexpr const char* kKernelDims[] = {"out_channels", "in_channels", "kernel_height",
                                                "kernel_width"};
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      std::string name = a.rank() == 3   ? kImageDims[i]
                         : a.rank() == 4 ? kKernelDims[i]
                                         : "dim" + std::to_string(i);
      throw ShapeError(name, a.dim(i), b.dim(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise suite

namespace detail {
template <typename T, typename F>
BasicTensor<T> zip(const BasicTensor<T>& a, const BasicTensor<T>& b, F f) {
  require_same_shape(a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}
template <typename T, typename F>
BasicTensor<T> map(const BasicTensor<T>& a, F f) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}
}  // namespace detail

inline constexpr double kDivEpsilon = 1e-8;

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x + y; });
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x - y; });
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x * y; });
}

/// Denominator magnitude is floored at `eps`, keeping its sign (zero counts
/// as positive).
template <typename T>
T safe_divide(T num, T den, T eps = T(kDivEpsilon)) {
  if (std::abs(den) < eps) den = den < T(0) ? -eps : eps;
  return num / den;
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b, T eps = T(kDivEpsilon)) {
  return detail::zip(a, b, [eps](T x, T y) { return safe_divide(x, y, eps); });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return detail::map(a, [s](T x) { return x * s; });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  return detail::map(a, [lo, hi](T x) { return std::clamp(x, lo, hi); });
}

/// Elementwise clamp with a per-element lower bound.
template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, const BasicTensor<T>& lo, T hi) {
  return detail::zip(a, lo, [hi](T x, T l) { return std::clamp(x, l, hi); });
}

/// Gradient of clamp(a, lo, hi): passes where lo < a < hi.
template <typename T>
BasicTensor<T> clamp_backward(const BasicTensor<T>& a, T lo, T hi, const BasicTensor<T>& upstream) {
  return detail::zip(a, upstream, [lo, hi](T x, T g) { return (x > lo && x < hi) ? g : T(0); });
}

template <typename T>
T sum(const BasicTensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return s;
}

template <typename T>
T mean(const BasicTensor<T>& a) {
  return a.empty() ? T(0) : sum(a) / static_cast<T>(a.size());
}

template <typename T>
BasicTensor<T> sum_backward(const BasicTensor<T>& a, T upstream = T(1)) {
  return BasicTensor<T>(a.shape(), upstream);
}

template <typename T>
BasicTensor<T> mean_backward(const BasicTensor<T>& a, T upstream = T(1)) {
  return BasicTensor<T>(a.shape(), upstream / static_cast<T>(a.size()));
}

/// In-place a += s * b.
template <typename T>
void axpy(BasicTensor<T>& a, T s, const BasicTensor<T>& b) {
  require_same_shape(a, b);
  T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += s * pb[i];
}

template <typename T>
T dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b);
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b);
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Border handling for rank-3 tensors

/// Surround each plane with a ring of width (ry, rx) holding `fill[c]`
/// (an empty `fill` means zeros).
template <typename T>
BasicTensor<T> pad(const BasicTensor<T>& in, std::size_t ry, std::size_t rx,
                   std::span<const T> fill = {}) {
  const std::size_t C = in.channels(), H = in.height(), W = in.width();
  if (!fill.empty() && fill.size() != C) throw ShapeError("padding_values", C, fill.size());
  const std::size_t Hp = H + 2 * ry, Wp = W + 2 * rx;
  BasicTensor<T> out({C, Hp, Wp});
  for (std::size_t c = 0; c < C; ++c) {
    T* dst = out.plane(c);
    if (!fill.empty()) std::fill(dst, dst + Hp * Wp, fill[c]);
    const T* src = in.plane(c);
    for (std::size_t y = 0; y < H; ++y) {
      std::copy(src + y * W, src + (y + 1) * W, dst + (y + ry) * Wp + rx);
    }
  }
  return out;
}

/// Remove a ring of width (ry, rx) from each plane.
template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& in, std::size_t ry, std::size_t rx) {
  const std::size_t C = in.channels(), Hp = in.height(), Wp = in.width();
  if (Hp < 2 * ry + 1) throw ShapeError("height", 2 * ry + 1, Hp);
  if (Wp < 2 * rx + 1) throw ShapeError("width", 2 * rx + 1, Wp);
  const std::size_t H = Hp - 2 * ry, W = Wp - 2 * rx;
  BasicTensor<T> out({C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    const T* src = in.plane(c);
    T* dst = out.plane(c);
    for (std::size_t y = 0; y < H; ++y) {
      std::copy(src + (y + ry) * Wp + rx, src + (y + ry) * Wp + rx + W, dst + y * W);
    }
  }
  return out;
}

}  // namespace relume
