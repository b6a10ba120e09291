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

// Unsupervised illumination objective:
//
//   L = ||u - y||^2 + lambda * sum_i sum_{j in T(i)} w_ij |u_i - u_j|
//   w_ij = exp(-sum_c (y_ic - y_jc)^2 / (2 sigma^2))
//
// T(i) is the 4-neighbourhood by default; pairs are ordered, so each
// undirected edge contributes twice. The smoothness term is applied per
// channel of u with weights shared across channels.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "relume/error.hpp"
#include "relume/tensor.hpp"

namespace relume {

enum class Neighborhood { FourConnected, Window };
enum class Reduction { Mean, Sum };

inline std::string_view to_string(Neighborhood n) {
  return n == Neighborhood::FourConnected ? "four_connected" : "window";
}
inline std::string_view to_string(Reduction r) { return r == Reduction::Mean ? "mean" : "sum"; }

struct LossConfig {
  double lambda = 1.0;
  double sigma = 0.1;
  Neighborhood neighborhood = Neighborhood::FourConnected;
  std::size_t window_radius = 1;  // used by Neighborhood::Window
  Reduction reduction = Reduction::Mean;

  void validate() const {
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
    if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
    if (neighborhood == Neighborhood::Window && window_radius == 0) {
      throw DomainError("window neighbourhood needs a positive radius");
    }
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossValue {
  double value = 0.0;
  Tensor grad;
};

inline LossValue fidelity_loss(const Tensor& u, const Tensor& y, Reduction reduction = Reduction::Mean) {
  require_same_shape(u, y);
  const double norm = reduction == Reduction::Mean ? 1.0 / static_cast<double>(u.size()) : 1.0;
  LossValue out{0.0, Tensor(u.shape())};
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - y[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d * norm;
  }
  out.value *= norm;
  return out;
}

/// w_ij for every ordered neighbour pair, stored as one H x W plane per
/// offset (dy, dx); entry p holds the weight of the pair (p, p + offset),
/// or 0 when p + offset falls outside the image.
struct EdgeWeights {
  std::size_t height = 0, width = 0;
  std::vector<std::pair<int, int>> offsets;
  std::vector<std::vector<double>> planes;
};

inline std::vector<std::pair<int, int>> neighbor_offsets(const LossConfig& cfg) {
  if (cfg.neighborhood == Neighborhood::FourConnected) return {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  std::vector<std::pair<int, int>> offs;
  const int r = static_cast<int>(cfg.window_radius);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dy != 0 || dx != 0) offs.emplace_back(dy, dx);
  return offs;
}

inline EdgeWeights smoothness_weights(const Tensor& y, const LossConfig& cfg = {}) {
  cfg.validate();
  const std::size_t C = y.channels(), H = y.height(), W = y.width();
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  EdgeWeights w{H, W, neighbor_offsets(cfg), {}};
  for (auto [dy, dx] : w.offsets) {
    std::vector<double> plane(H * W, 0.0);
    for (std::size_t py = 0; py < H; ++py) {
      const long qy = static_cast<long>(py) + dy;
      if (qy < 0 || qy >= static_cast<long>(H)) continue;
      for (std::size_t px = 0; px < W; ++px) {
        const long qx = static_cast<long>(px) + dx;
        if (qx < 0 || qx >= static_cast<long>(W)) continue;
        double d2 = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double d = y.at(c, py, px) - y.at(c, static_cast<std::size_t>(qy), static_cast<std::size_t>(qx));
          d2 += d * d;
        }
        plane[py * W + px] = std::exp(-d2 * inv);
      }
    }
    w.planes.push_back(std::move(plane));
  }
  return w;
}

/// Sub-gradient uses sign(0) = 0. Mean reduction divides by the pixel count.
inline LossValue smoothness_loss(const Tensor& u, const EdgeWeights& weights,
                                 Reduction reduction = Reduction::Mean) {
  const std::size_t C = u.channels(), H = u.height(), W = u.width();
  if (H != weights.height) throw ShapeError("height", weights.height, H);
  if (W != weights.width) throw ShapeError("width", weights.width, W);
  const double norm = reduction == Reduction::Mean ? 1.0 / static_cast<double>(H * W) : 1.0;
  LossValue out{0.0, Tensor(u.shape())};
  for (std::size_t k = 0; k < weights.offsets.size(); ++k) {
    const auto [dy, dx] = weights.offsets[k];
    const std::vector<double>& plane = weights.planes[k];
    for (std::size_t py = 0; py < H; ++py) {
      const long qy = static_cast<long>(py) + dy;
      if (qy < 0 || qy >= static_cast<long>(H)) continue;
      for (std::size_t px = 0; px < W; ++px) {
        const long qx = static_cast<long>(px) + dx;
        if (qx < 0 || qx >= static_cast<long>(W)) continue;
        const double w = plane[py * W + px];
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t q = (c * H + static_cast<std::size_t>(qy)) * W + static_cast<std::size_t>(qx);
          const std::size_t p = (c * H + py) * W + px;
          const double d = u[p] - u[q];
          out.value += w * std::abs(d);
          const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          out.grad[p] += w * s * norm;
          out.grad[q] -= w * s * norm;
        }
      }
    }
  }
  out.value *= norm;
  return out;
}

inline LossValue smoothness_loss(const Tensor& u, const EdgeWeights& weights, const LossConfig& cfg) {
  return smoothness_loss(u, weights, cfg.reduction);
}

struct LossBreakdown {
  double fidelity = 0.0;
  double smooth = 0.0;
  double total = 0.0;
  Tensor grad;
};

inline LossBreakdown total_loss(const Tensor& u, const Tensor& y, const EdgeWeights& weights,
                                const LossConfig& cfg) {
  LossValue fid = fidelity_loss(u, y, cfg.reduction);
  LossBreakdown out{fid.value, 0.0, fid.value, std::move(fid.grad)};
  if (cfg.lambda != 0.0) {
    LossValue sm = smoothness_loss(u, weights, cfg.reduction);
    out.smooth = sm.value;
    out.total += cfg.lambda * sm.value;
    axpy(out.grad, cfg.lambda, sm.grad);
  }
  return out;
}

inline LossBreakdown total_loss(const Tensor& u, const Tensor& y, const LossConfig& cfg = {}) {
  return total_loss(u, y, smoothness_weights(y, cfg), cfg);
}

}  // namespace relume
