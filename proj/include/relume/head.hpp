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
#include <string>
#include <string_view>

#include "relume/conv.hpp"
#include "relume/error.hpp"
#include "relume/tensor.hpp"

namespace relume {

enum class ClampMode { UnitInterval, InputFloor };

inline std::string_view to_string(ClampMode m) {
  return m == ClampMode::UnitInterval ? "unit_interval" : "input_floor";
}

inline ClampMode clamp_mode_from_string(std::string_view s) {
  if (s == "unit_interval") return ClampMode::UnitInterval;
  if (s == "input_floor") return ClampMode::InputFloor;
  throw DomainError("unknown clamp mode '" + std::string(s) + "'");
}

/// Everything after the linear block: u_raw = leaky_relu(linear) + y, then
/// u = clamp(u_raw, lower, 1) with lower = floor (UnitInterval) or
/// max(y, floor) (InputFloor). Shared by the supernet and the merged model
/// so both apply the identical convention.
struct OutputHead {
  double activation_slope = 0.01;
  double clamp_floor = 1e-4;
  ClampMode clamp_mode = ClampMode::InputFloor;
  bool residual = true;

  void validate() const {
    if (!(clamp_floor > 0.0 && clamp_floor < 1.0)) throw DomainError("clamp floor must lie in (0, 1)");
  }

  template <typename T>
  BasicTensor<T> pre_clamp(const BasicTensor<T>& linear, const BasicTensor<T>& y) const {
    BasicTensor<T> u = leaky_relu(linear, static_cast<T>(activation_slope));
    if (residual) axpy(u, T(1), y);
    return u;
  }

  template <typename T>
  BasicTensor<T> clamp(const BasicTensor<T>& u_raw, const BasicTensor<T>& y) const {
    require_same_shape(u_raw, y);
    const T floor = static_cast<T>(clamp_floor);
    BasicTensor<T> u(u_raw.shape());
    for (std::size_t i = 0; i < u.size(); ++i) {
      const T lo = clamp_mode == ClampMode::InputFloor ? std::max(y[i], floor) : floor;
      u[i] = std::clamp(u_raw[i], std::min(lo, T(1)), T(1));
    }
    return u;
  }

  /// The head on one element: clamp(leaky_relu(linear) + y).
  template <typename T>
  T apply(T linear, T y) const {
    T u = linear >= T(0) ? linear : static_cast<T>(activation_slope) * linear;
    if (residual) u += T(1) * y;
    const T floor = static_cast<T>(clamp_floor);
    const T lo = clamp_mode == ClampMode::InputFloor ? std::max(y, floor) : floor;
    return std::clamp(u, std::min(lo, T(1)), T(1));
  }

  /// Gradient w.r.t. the linear block output given dL/du_raw.
  Tensor backward(const Tensor& linear, const Tensor& grad_u_raw) const {
    return leaky_relu_backward(linear, activation_slope, grad_u_raw);
  }

  friend bool operator==(const OutputHead&, const OutputHead&) = default;
};

}  // namespace relume
