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

// 8-bit RGB images as 3 x H x W tensors in [0, 1]. Byte b reads as b / 255;
// a value v writes as floor(255 v + 0.5) after clamping to [0, 1].
// Binary PPM (P6, maxval 255) is always available; PNG needs libpng.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#ifdef RELUME_HAVE_PNG
#include <png.h>
#endif

#include "relume/error.hpp"
#include "relume/io.hpp"
#include "relume/tensor.hpp"

namespace relume {

inline std::uint8_t quantize(double v) {
  if (std::isnan(v)) throw DomainError("cannot quantize NaN");
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

/// Interleaved RGB bytes, row-major.
inline std::string to_rgb8(const Tensor& img) {
  if (img.rank() != 3) throw ShapeError("image_rank", 3, img.rank());
  if (img.channels() != 3) throw ShapeError("channels", 3, img.channels());
  const std::size_t H = img.height(), W = img.width();
  std::string bytes(3 * H * W, '\0');
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) bytes[(y * W + x) * 3 + c] = static_cast<char>(quantize(img.at(c, y, x)));
  return bytes;
}

inline Tensor from_rgb8(std::string_view bytes, std::size_t height, std::size_t width) {
  Tensor img({3, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<unsigned char>(bytes[(y * width + x) * 3 + c]) / 255.0;
  return img;
}

inline std::string encode_ppm(const Tensor& img) {
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  return out + to_rgb8(img);
}

namespace detail {

class PnmHeaderReader {
 public:
  PnmHeaderReader(std::string_view s, std::size_t pos) : s_(s), pos_(pos) {}

  std::size_t pos() const { return pos_; }
  std::size_t token_start() const { return token_start_; }

  void skip_space_and_comments() {
    while (pos_ < s_.size()) {
      const char ch = s_[pos_];
      if (ch == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = token_start_ = pos_;
    std::size_t v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(s_[pos_] - '0');
      if (v > (1u << 24)) throw ParseError(std::string(what) + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw ParseError(pos_ >= s_.size() ? std::string("header ends before ") + what
                                         : std::string("expected ") + what,
                       start);
    }
    return v;
  }

  void single_whitespace() {
    if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      throw ParseError("expected one whitespace byte after maxval", pos_);
    }
    ++pos_;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t token_start_ = 0;
};

}  // namespace detail

inline Tensor decode_ppm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ParseError("missing P6 magic", 0);
  detail::PnmHeaderReader r(bytes, 2);
  const std::size_t width = r.number("width");
  if (width == 0) throw ParseError("width is zero", r.token_start());
  const std::size_t height = r.number("height");
  if (height == 0) throw ParseError("height is zero", r.token_start());
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval), r.token_start());
  r.single_whitespace();
  const std::size_t data = r.pos();
  const std::size_t need = 3 * width * height;
  if (bytes.size() - data < need) {
    throw ParseError("pixel data truncated: expected " + std::to_string(need) + " bytes, found " +
                         std::to_string(bytes.size() - data),
                     bytes.size());
  }
  return from_rgb8(bytes.substr(data, need), height, width);
}

#ifdef RELUME_HAVE_PNG
inline constexpr bool kHavePng = true;

inline std::string encode_png(const Tensor& img) {
  const std::string rgb = to_rgb8(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline Tensor decode_png(std::string_view bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ParseError(std::string("png: ") + image.message, 0);
  }
  image.format = PNG_FORMAT_RGB;
  std::string rgb(PNG_IMAGE_SIZE(image), '\0');
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ParseError(std::string("png: ") + image.message, 0);
  }
  return from_rgb8(rgb, image.height, image.width);
}
#else
inline constexpr bool kHavePng = false;

inline std::string encode_png(const Tensor&) { throw Error("built without PNG support"); }
inline Tensor decode_png(std::string_view) { throw Error("built without PNG support"); }
#endif

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

inline bool is_image_path(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".ppm" || (kHavePng && ext == ".png");
}

inline Tensor read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return lower_extension(path) == ".png" ? decode_png(bytes) : decode_ppm(bytes);
}

inline void write_image(const Tensor& img, const std::filesystem::path& path) {
  write_file_atomic(path, lower_extension(path) == ".png" ? encode_png(img) : encode_ppm(img));
}

}  // namespace relume
