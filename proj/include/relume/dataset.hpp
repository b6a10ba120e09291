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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "relume/error.hpp"
#include "relume/image_io.hpp"
#include "relume/rng.hpp"
#include "relume/tensor.hpp"

namespace relume {

/// y = scale * clean^gamma, clamped to [0, 1].
inline Tensor synth_lowlight(const Tensor& clean, double gamma, double scale) {
  if (!(gamma >= 1.0)) throw DomainError("gamma must be at least 1");
  if (!(scale > 0.0 && scale <= 1.0)) throw DomainError("scale must lie in (0, 1]");
  return detail::map(clean, [&](double v) {
    return std::clamp(scale * std::pow(std::clamp(v, 0.0, 1.0), gamma), 0.0, 1.0);
  });
}

/// A clean test scene: a smooth two-colour gradient with a few flat
/// rectangles and discs on top, plus faint per-pixel texture.
inline Tensor synth_clean(Rng& rng, std::size_t height, std::size_t width) {
  Tensor img({3, height, width});
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.2, 0.9);
    c1[c] = rng.uniform(0.2, 0.9);
  }
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double t = 0.5 + 0.5 * ((x / w - 0.5) * ca + (y / h - 0.5) * sa) * 1.4142135623730951;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = c0[c] + (c1[c] - c0[c]) * t;
    }
  const std::size_t shapes = 3 + rng.below(4);
  for (std::size_t s = 0; s < shapes; ++s) {
    double color[3];
    for (double& v : color) v = rng.uniform(0.05, 1.0);
    const double cy = rng.uniform(0.0, h), cx = rng.uniform(0.0, w);
    const double ry = rng.uniform(0.1, 0.35) * h, rx = rng.uniform(0.1, 0.35) * w;
    const bool disc = rng.below(2) == 0;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside)
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
      }
  }
  for (double& v : img.values()) v = std::clamp(v + rng.uniform(-0.02, 0.02), 0.0, 1.0);
  return img;
}

struct SynthRecipe {
  std::size_t count = 16;
  std::size_t size = 32;
  double gamma_min = 2.0, gamma_max = 3.0;
  double scale_min = 0.3, scale_max = 0.6;
  std::uint64_t seed = 7;

  void validate() const {
    if (count == 0 || size == 0) throw DomainError("synthetic set needs a positive count and size");
    if (!(gamma_min >= 1.0 && gamma_max >= gamma_min)) throw DomainError("bad gamma range");
    if (!(scale_min > 0.0 && scale_max <= 1.0 && scale_max >= scale_min)) throw DomainError("bad scale range");
  }
};

struct ImagePair {
  Tensor clean;
  Tensor low;
};

/// Deterministic in `recipe`. `stream` separates disjoint sets drawn with
/// the same seed (training, validation, held-out).
inline std::vector<ImagePair> synth_dataset(const SynthRecipe& recipe, std::string_view stream = "train") {
  recipe.validate();
  Rng rng = Rng::stream(recipe.seed, "synth/" + std::string(stream));
  std::vector<ImagePair> out;
  out.reserve(recipe.count);
  for (std::size_t i = 0; i < recipe.count; ++i) {
    Tensor clean = synth_clean(rng, recipe.size, recipe.size);
    const double gamma = rng.uniform(recipe.gamma_min, recipe.gamma_max);
    const double scale = rng.uniform(recipe.scale_min, recipe.scale_max);
    Tensor low = synth_lowlight(clean, gamma, scale);
    out.push_back({std::move(clean), std::move(low)});
  }
  return out;
}

inline std::vector<Tensor> low_images(const std::vector<ImagePair>& pairs) {
  std::vector<Tensor> out;
  out.reserve(pairs.size());
  for (const ImagePair& p : pairs) out.push_back(p.low);
  return out;
}

/// Image files directly inside `dir`, sorted by name.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_path(entry.path())) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<Tensor> load_images(const std::filesystem::path& dir) {
  std::vector<Tensor> out;
  for (const auto& p : list_images(dir)) out.push_back(read_image(p));
  if (out.empty()) throw Error("no images in '" + dir.string() + "'");
  return out;
}

}  // namespace relume
