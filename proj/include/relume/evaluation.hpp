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
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "relume/enhancer.hpp"
#include "relume/error.hpp"
#include "relume/rng.hpp"
#include "relume/tensor.hpp"

namespace relume {

/// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  require_same_shape(a, b);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

inline std::array<double, kSsimWindow> ssim_taps() {
  std::array<double, kSsimWindow> g{};
  double s = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kSsimWindow / 2);
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

/// Separable Gaussian filter keeping only windows fully inside the image.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t H, std::size_t W) {
  static const auto g = ssim_taps();
  const std::size_t oh = H - kSsimWindow + 1, ow = W - kSsimWindow + 1;
  std::vector<double> rows(H * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) s += g[k] * img[y * W + x + k];
      rows[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) s += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

inline std::vector<double> gray(const Tensor& t) {
  const std::size_t C = t.channels(), n = t.height() * t.width();
  std::vector<double> out(n, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) out[i] += t[c * n + i];
  for (double& v : out) v /= static_cast<double>(C);
  return out;
}

}  // namespace detail

/// Single-scale SSIM on the channel-mean grey image, dynamic range 1.
inline double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b);
  const std::size_t H = a.height(), W = a.width();
  if (H < kSsimWindow || W < kSsimWindow) {
    throw DomainError("SSIM needs images of at least " + std::to_string(kSsimWindow) + "x" +
                      std::to_string(kSsimWindow));
  }
  const std::vector<double> x = detail::gray(a), y = detail::gray(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::filter_valid(x, H, W), my = detail::filter_valid(y, H, W);
  const auto sxx = detail::filter_valid(xx, H, W), syy = detail::filter_valid(yy, H, W);
  const auto sxy = detail::filter_valid(xy, H, W);
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------------------
// Timing

struct Resolution {
  std::size_t width = 0;
  std::size_t height = 0;
  std::string label() const { return std::to_string(width) + "x" + std::to_string(height); }
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

inline const std::vector<Resolution>& default_bench_resolutions() {
  static const std::vector<Resolution> r{{1280, 720}, {1920, 1080}, {2560, 1440}};
  return r;
}

enum class BenchPrecision { Float32, Float64 };

struct BenchOptions {
  std::vector<Resolution> resolutions = default_bench_resolutions();
  std::size_t runs = 100;
  std::size_t warmup = 3;
  std::uint64_t seed = 0;
  BenchPrecision precision = BenchPrecision::Float32;
};

struct BenchEntry {
  Resolution resolution;
  std::vector<double> samples;  // seconds per run
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct BenchReport {
  std::size_t runs = 0;
  std::size_t warmup = 0;
  std::string environment;
  std::vector<BenchEntry> entries;
};

inline std::string bench_environment(BenchPrecision precision) {
  std::string env = "threads=1 precision=";
  env += precision == BenchPrecision::Float32 ? "float32" : "float64";
#if defined(__clang__)
  env += " compiler=clang-" + std::to_string(__clang_major__) + "." + std::to_string(__clang_minor__);
#elif defined(__GNUC__)
  env += " compiler=gcc-" + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#endif
#ifdef NDEBUG
  env += " build=release";
#else
  env += " build=debug";
#endif
  return env;
}

/// Sample statistics; stddev is the population value.
inline void summarize(BenchEntry& e) {
  const std::size_t n = e.samples.size();
  if (n == 0) return;
  double s = 0.0;
  for (double t : e.samples) s += t;
  e.mean = s / static_cast<double>(n);
  double v = 0.0;
  for (double t : e.samples) v += (t - e.mean) * (t - e.mean);
  e.stddev = std::sqrt(v / static_cast<double>(n));
  std::vector<double> sorted = e.samples;
  std::sort(sorted.begin(), sorted.end());
  e.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

namespace detail {

template <typename T>
double time_enhance(const BasicEnhancerModel<T>& m, const BasicTensor<T>& y) {
  const auto start = std::chrono::steady_clock::now();
  const BasicTensor<T> x = enhance(m, y);
  const auto stop = std::chrono::steady_clock::now();
  // Keep the result observable so the call is not elided.
  volatile T sink = x[0];
  (void)sink;
  return std::chrono::duration<double>(stop - start).count();
}

template <typename T>
BenchEntry bench_one(const BasicEnhancerModel<T>& m, const Resolution& r, const BenchOptions& opt, Rng& rng) {
  BasicTensor<T> y({m.kernel.in_channels(), r.height, r.width});
  for (T& v : y.values()) v = static_cast<T>(rng.uniform());
  BenchEntry e;
  e.resolution = r;
  for (std::size_t i = 0; i < opt.warmup; ++i) time_enhance(m, y);
  for (std::size_t i = 0; i < opt.runs; ++i) e.samples.push_back(time_enhance(m, y));
  return e;
}

}  // namespace detail

/// Times enhance() end to end on random inputs, single-threaded.
inline BenchReport bench_enhance(const EnhancerModel& model, const BenchOptions& opt = {}) {
  if (opt.runs == 0) throw DomainError("bench needs at least one run");
  model.validate();
  BenchReport report{opt.runs, opt.warmup, bench_environment(opt.precision), {}};
  Rng rng = Rng::stream(opt.seed, "bench");
  const EnhancerModelF model_f = model.cast<float>();
  for (const Resolution& r : opt.resolutions) {
    if (r.width == 0 || r.height == 0) throw DomainError("bench resolution must be positive");
    BenchEntry e = opt.precision == BenchPrecision::Float32 ? detail::bench_one(model_f, r, opt, rng)
                                                            : detail::bench_one(model, r, opt, rng);
    summarize(e);
    e.macs = count_flops(model, r.height, r.width);
    e.params = count_params(model);
    report.entries.push_back(std::move(e));
  }
  return report;
}

inline void write_bench_csv(std::ostream& os, const BenchReport& r) {
  os << "resolution,width,height,runs,warmup,mean_s,median_s,stddev_s,macs,params\n";
  os << std::setprecision(9);
  for (const BenchEntry& e : r.entries) {
    os << e.resolution.label() << ',' << e.resolution.width << ',' << e.resolution.height << ',' << r.runs << ','
       << r.warmup << ',' << e.mean << ',' << e.median << ',' << e.stddev << ',' << e.macs << ',' << e.params
       << '\n';
  }
}

inline void write_bench_text(std::ostream& os, const BenchReport& r) {
  os << "environment: " << r.environment << '\n';
  os << "runs: " << r.runs << "  warmup: " << r.warmup << '\n';
  os << std::left << std::setw(12) << "resolution" << std::right << std::setw(12) << "mean ms" << std::setw(12)
     << "median ms" << std::setw(12) << "stddev ms" << std::setw(12) << "GMACs" << std::setw(10) << "params"
     << '\n';
  os << std::fixed;
  for (const BenchEntry& e : r.entries) {
    os << std::left << std::setw(12) << e.resolution.label() << std::right << std::setprecision(3) << std::setw(12)
       << e.mean * 1e3 << std::setw(12) << e.median * 1e3 << std::setw(12) << e.stddev * 1e3 << std::setprecision(4)
       << std::setw(12) << static_cast<double>(e.macs) * 1e-9 << std::setw(10) << e.params << '\n';
  }
  os << std::defaultfloat;
}

}  // namespace relume
