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

// Text model files. One field per line, "name value...", in a fixed order;
// doubles use the shortest representation that reads back to the same
// bits. See docs/model_format.md for the schema of each kind.

#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relume/enhancer.hpp"
#include "relume/error.hpp"
#include "relume/head.hpp"
#include "relume/io.hpp"
#include "relume/kernel_algebra.hpp"
#include "relume/losses.hpp"
#include "relume/supernet.hpp"

namespace relume {

inline constexpr int kFormatVersion = 1;
inline constexpr std::string_view kFormatMagic = "relume-model";

enum class ModelKind { Merged, SupernetCheckpoint, BlockIR };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Merged: return "merged";
    case ModelKind::SupernetCheckpoint: return "supernet_checkpoint";
    case ModelKind::BlockIR: return "block_ir";
  }
  return "unknown";
}

/// Provenance carried by every kind. `created` is a single token; "none"
/// keeps files byte-identical across runs.
struct ModelMeta {
  std::optional<std::uint64_t> seed;
  LossConfig loss;
  std::string created = "none";
  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

struct BlockFile {
  LinearBlockIR block;
  OutputHead head;
  friend bool operator==(const BlockFile&, const BlockFile&) = default;
};

namespace detail {

class Writer {
 public:
  void line(std::string_view text) {
    out_ += text;
    out_ += '\n';
  }
  void field(std::string_view name, std::string_view value) {
    out_ += name;
    out_ += ' ';
    out_ += value;
    out_ += '\n';
  }
  void number(std::string_view name, double v) { field(name, format(v)); }
  void integer(std::string_view name, std::uint64_t v) { field(name, std::to_string(v)); }
  void numbers(std::string_view name, std::span<const double> vs) {
    out_ += name;
    for (double v : vs) {
      out_ += ' ';
      out_ += format(v);
    }
    out_ += '\n';
  }
  void integers(std::string_view name, std::span<const std::size_t> vs) {
    out_ += name;
    for (std::size_t v : vs) {
      out_ += ' ';
      out_ += std::to_string(v);
    }
    out_ += '\n';
  }
  std::string take() { return std::move(out_); }

  static std::string format(double v) {
    if (!std::isfinite(v)) throw DomainError("cannot serialize a non-finite value");
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view text) {
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      lines_.push_back(text.substr(start, end - start));
      start = end + 1;
    }
  }

  std::size_t line_number() const { return next_ + 1; }

  /// Tokens after the name of the next line, which must be `name`.
  std::vector<std::string_view> expect(std::string_view name) {
    if (next_ >= lines_.size()) throw ParseError("file ends before field '" + std::string(name) + "'", next_ + 1);
    std::vector<std::string_view> tokens = split(lines_[next_]);
    const std::string_view found = tokens.empty() ? std::string_view{} : tokens.front();
    if (found != name) {
      throw ParseError("unknown field '" + std::string(found) + "' for format version " +
                           std::to_string(kFormatVersion) + ", expected '" + std::string(name) + "'",
                       next_ + 1);
    }
    ++next_;
    tokens.erase(tokens.begin());
    return tokens;
  }

  std::string_view one(std::string_view name) {
    const auto t = expect(name);
    if (t.size() != 1) throw error(name, "expected 1 value, got " + std::to_string(t.size()), -1);
    return t[0];
  }
  double number(std::string_view name) { return to_double(name, one(name)); }
  std::uint64_t integer(std::string_view name) { return to_integer(name, one(name)); }

  std::vector<double> numbers(std::string_view name, std::size_t count) {
    const auto t = expect(name);
    if (t.size() != count) {
      throw error(name, "expected " + std::to_string(count) + " values, got " + std::to_string(t.size()), -1);
    }
    std::vector<double> out;
    out.reserve(count);
    for (std::string_view s : t) out.push_back(to_double(name, s, -1));
    return out;
  }
  std::vector<std::size_t> integers(std::string_view name, std::size_t count) {
    const auto t = expect(name);
    if (t.size() != count) {
      throw error(name, "expected " + std::to_string(count) + " values, got " + std::to_string(t.size()), -1);
    }
    std::vector<std::size_t> out;
    for (std::string_view s : t) out.push_back(static_cast<std::size_t>(to_integer(name, s, -1)));
    return out;
  }

  void finish() {
    expect("end");
    while (next_ < lines_.size() && lines_[next_].empty()) ++next_;
    if (next_ < lines_.size()) throw ParseError("content after 'end'", next_ + 1);
  }

  ParseError error(std::string_view field, const std::string& what, int rel = 0) const {
    return ParseError("field '" + std::string(field) + "': " + what, next_ + 1 + rel);
  }

  double to_double(std::string_view field, std::string_view s, int rel = -1) const {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
      throw error(field, "'" + std::string(s) + "' is not a number", rel);
    }
    if (!std::isfinite(v)) throw error(field, "non-finite value", rel);
    return v;
  }
  std::uint64_t to_integer(std::string_view field, std::string_view s, int rel = -1) const {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
      throw error(field, "'" + std::string(s) + "' is not a non-negative integer", rel);
    }
    return v;
  }

 private:
  static std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\r')) ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\r') ++i;
      if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
  }

  std::vector<std::string_view> lines_;
  std::size_t next_ = 0;
};

inline void write_header(Writer& w, ModelKind kind, const ModelMeta& meta) {
  w.field(kFormatMagic, std::to_string(kFormatVersion));
  w.field("kind", to_string(kind));
  if (meta.created.empty() || meta.created.find_first_of(" \t\r\n") != std::string::npos) {
    throw DomainError("creation stamp must be a single token");
  }
  w.field("created", meta.created);
  w.field("seed", meta.seed ? std::to_string(*meta.seed) : "none");
  w.number("loss.lambda", meta.loss.lambda);
  w.number("loss.sigma", meta.loss.sigma);
  w.field("loss.neighborhood", to_string(meta.loss.neighborhood));
  w.integer("loss.window_radius", meta.loss.window_radius);
  w.field("loss.reduction", to_string(meta.loss.reduction));
}

inline ModelMeta read_header(Reader& r, ModelKind kind) {
  const auto magic = r.expect(kFormatMagic);
  if (magic.size() != 1) throw r.error(kFormatMagic, "expected a version number", -1);
  const std::uint64_t version = r.to_integer(kFormatMagic, magic[0]);
  if (version != static_cast<std::uint64_t>(kFormatVersion)) {
    throw ParseError("unsupported format version " + std::to_string(version) + " (this build reads version " +
                         std::to_string(kFormatVersion) + ")",
                     1);
  }
  const std::string_view k = r.one("kind");
  if (k != to_string(kind)) {
    throw r.error("kind", "file holds '" + std::string(k) + "', expected '" + std::string(to_string(kind)) + "'", -1);
  }
  ModelMeta meta;
  meta.created = std::string(r.one("created"));
  const std::string_view seed = r.one("seed");
  if (seed != "none") meta.seed = r.to_integer("seed", seed);
  meta.loss.lambda = r.number("loss.lambda");
  meta.loss.sigma = r.number("loss.sigma");
  const std::string_view nb = r.one("loss.neighborhood");
  if (nb == "four_connected") {
    meta.loss.neighborhood = Neighborhood::FourConnected;
  } else if (nb == "window") {
    meta.loss.neighborhood = Neighborhood::Window;
  } else {
    throw r.error("loss.neighborhood", "unknown value '" + std::string(nb) + "'", -1);
  }
  meta.loss.window_radius = r.integer("loss.window_radius");
  const std::string_view red = r.one("loss.reduction");
  if (red == "mean") {
    meta.loss.reduction = Reduction::Mean;
  } else if (red == "sum") {
    meta.loss.reduction = Reduction::Sum;
  } else {
    throw r.error("loss.reduction", "unknown value '" + std::string(red) + "'", -1);
  }
  try {
    meta.loss.validate();
  } catch (const DomainError& e) {
    throw ParseError(std::string("loss config: ") + e.what(), r.line_number() - 1);
  }
  return meta;
}

inline void write_head(Writer& w, const OutputHead& h) {
  w.number("head.activation_slope", h.activation_slope);
  w.number("head.clamp_floor", h.clamp_floor);
  w.field("head.clamp_mode", to_string(h.clamp_mode));
  w.field("head.residual", h.residual ? "true" : "false");
}

inline OutputHead read_head(Reader& r) {
  OutputHead h;
  h.activation_slope = r.number("head.activation_slope");
  h.clamp_floor = r.number("head.clamp_floor");
  const std::string_view mode = r.one("head.clamp_mode");
  try {
    h.clamp_mode = clamp_mode_from_string(mode);
    h.validate();
  } catch (const DomainError& e) {
    throw ParseError(std::string("head: ") + e.what(), r.line_number() - 1);
  }
  const std::string_view res = r.one("head.residual");
  if (res != "true" && res != "false") throw r.error("head.residual", "expected true or false", -1);
  h.residual = res == "true";
  return h;
}

/// "kernel O C kh kw", then "weights ...", then "bias ...".
inline void write_kernel(Writer& w, const ConvKernel& k) {
  w.integers("kernel", std::vector<std::size_t>{k.out_channels(), k.in_channels(), k.kernel_height(),
                                                k.kernel_width()});
  w.numbers("weights", k.weights.values());
  w.numbers("bias", k.bias);
}

inline ConvKernel read_kernel(Reader& r) {
  const auto dims = r.integers("kernel", 4);
  for (std::size_t d : dims)
    if (d == 0 || d > 4096) throw r.error("kernel", "dimension out of range", -1);
  ConvKernel k(dims[0], dims[1], dims[2], dims[3]);
  const auto w = r.numbers("weights", k.weights.size());
  std::copy(w.begin(), w.end(), k.weights.values().begin());
  k.bias = r.numbers("bias", dims[0]);
  try {
    k.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("kernel: ") + e.what(), r.line_number() - 3);
  }
  return k;
}

inline std::uint64_t read_count(Reader& r, std::string_view name, std::uint64_t lo, std::uint64_t hi) {
  const std::uint64_t v = r.integer(name);
  if (v < lo || v > hi) {
    throw r.error(name, std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", -1);
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// merged

inline std::string serialize_model(const EnhancerModel& m, const ModelMeta& meta = {}) {
  m.validate();
  detail::Writer w;
  detail::write_header(w, ModelKind::Merged, meta);
  detail::write_head(w, m.head);
  detail::write_kernel(w, m.kernel);
  w.line("end");
  return w.take();
}

inline EnhancerModel parse_model(std::string_view text, ModelMeta* meta = nullptr) {
  detail::Reader r(text);
  ModelMeta m = detail::read_header(r, ModelKind::Merged);
  EnhancerModel model;
  model.head = detail::read_head(r);
  model.kernel = detail::read_kernel(r);
  r.finish();
  try {
    model.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("model: ") + e.what(), 1);
  }
  if (meta) *meta = std::move(m);
  return model;
}

// ---------------------------------------------------------------------------
// block_ir

inline std::string serialize_block(const BlockFile& f, const ModelMeta& meta = {}) {
  validate(f.block);
  detail::Writer w;
  detail::write_header(w, ModelKind::BlockIR, meta);
  detail::write_head(w, f.head);
  w.integer("branches", f.block.branches.size());
  for (const BranchIR& b : f.block.branches) {
    w.integer("cells", b.cells.size());
    for (const CellIR& c : b.cells) {
      w.field("op", to_string(c.kind));
      w.integer("pool_window", c.pool_window);
      detail::write_kernel(w, c.kernel);
    }
  }
  w.line("end");
  return w.take();
}

inline BlockFile parse_block(std::string_view text, ModelMeta* meta = nullptr) {
  detail::Reader r(text);
  ModelMeta m = detail::read_header(r, ModelKind::BlockIR);
  BlockFile f;
  f.head = detail::read_head(r);
  const std::uint64_t branches = detail::read_count(r, "branches", 1, kMaxBranches);
  for (std::uint64_t b = 0; b < branches; ++b) {
    BranchIR branch;
    const std::uint64_t cells = detail::read_count(r, "cells", 1, kMaxCells);
    for (std::uint64_t c = 0; c < cells; ++c) {
      CellIR cell;
      const std::string_view op = r.one("op");
      try {
        cell.kind = op_kind_from_string(op);
      } catch (const DomainError& e) {
        throw r.error("op", e.what(), -1);
      }
      cell.pool_window = detail::read_count(r, "pool_window", 1, 99);
      cell.kernel = detail::read_kernel(r);
      branch.cells.push_back(std::move(cell));
    }
    f.block.branches.push_back(std::move(branch));
  }
  r.finish();
  try {
    validate(f.block);
  } catch (const Error& e) {
    throw ParseError(std::string("block: ") + e.what(), 1);
  }
  if (meta) *meta = std::move(m);
  return f;
}

// ---------------------------------------------------------------------------
// supernet_checkpoint

inline std::string serialize_checkpoint(const SupernetState& s, const ModelMeta& meta = {}) {
  if (s.weights.size() != SupernetState::kKernelCount) {
    throw ShapeError("kernel_count", SupernetState::kKernelCount, s.weights.size());
  }
  detail::Writer w;
  detail::write_header(w, ModelKind::SupernetCheckpoint, meta);
  detail::write_head(w, s.head);
  w.integer("channels", s.channels);
  w.integer("pool_window", s.pool_window);
  if (s.frozen.branches) {
    std::vector<std::size_t> v;
    for (bool keep : *s.frozen.branches) v.push_back(keep ? 1 : 0);
    w.integers("frozen.width", v);
  } else {
    w.field("frozen.width", "none");
  }
  if (s.frozen.depths) {
    w.integers("frozen.depth", *s.frozen.depths);
  } else {
    w.field("frozen.depth", "none");
  }
  if (s.frozen.ops) {
    std::vector<std::size_t> v;
    for (const auto& b : *s.frozen.ops) v.insert(v.end(), b.begin(), b.end());
    w.integers("frozen.cell", v);
  } else {
    w.field("frozen.cell", "none");
  }
  w.numbers("arch.width", s.arch.tier(Tier::Width));
  w.numbers("arch.depth", s.arch.tier(Tier::Depth));
  w.numbers("arch.cell", s.arch.tier(Tier::Cell));
  w.integer("kernels", s.weights.size());
  for (const ConvKernel& k : s.weights) detail::write_kernel(w, k);
  w.line("end");
  return w.take();
}

inline SupernetState parse_checkpoint(std::string_view text, ModelMeta* meta = nullptr) {
  detail::Reader r(text);
  ModelMeta m = detail::read_header(r, ModelKind::SupernetCheckpoint);
  SupernetState s;
  s.head = detail::read_head(r);
  s.channels = detail::read_count(r, "channels", 1, 64);
  s.pool_window = detail::read_count(r, "pool_window", 1, 99);
  if (s.pool_window % 2 == 0) throw r.error("pool_window", "must be odd", -1);

  auto frozen_line = [&r](std::string_view name, std::size_t count, std::size_t hi, std::size_t lo = 0) {
    const auto t = r.expect(name);
    if (t.size() == 1 && t[0] == "none") return std::optional<std::vector<std::size_t>>{};
    if (t.size() != count) {
      throw r.error(name, "expected 'none' or " + std::to_string(count) + " values, got " + std::to_string(t.size()),
                    -1);
    }
    std::vector<std::size_t> v;
    for (std::string_view tok : t) {
      const std::uint64_t x = r.to_integer(name, tok);
      if (x < lo || x > hi) throw r.error(name, "value " + std::to_string(x) + " out of range", -1);
      v.push_back(x);
    }
    return std::optional<std::vector<std::size_t>>(std::move(v));
  };
  if (auto v = frozen_line("frozen.width", kMaxBranches, 1)) {
    std::array<bool, kMaxBranches> keep{};
    for (std::size_t b = 0; b < kMaxBranches; ++b) keep[b] = (*v)[b] == 1;
    s.frozen.branches = keep;
  }
  if (auto v = frozen_line("frozen.depth", kMaxBranches, kMaxCells, 1)) {
    std::array<std::size_t, kMaxBranches> d{};
    std::copy(v->begin(), v->end(), d.begin());
    s.frozen.depths = d;
  }
  if (auto v = frozen_line("frozen.cell", kMaxBranches * kMaxCells, kCandidateOpCount - 1)) {
    std::array<std::array<std::size_t, kMaxCells>, kMaxBranches> ops{};
    for (std::size_t b = 0; b < kMaxBranches; ++b)
      for (std::size_t c = 0; c < kMaxCells; ++c) ops[b][c] = (*v)[b * kMaxCells + c];
    s.frozen.ops = ops;
  }
  for (Tier t : {Tier::Width, Tier::Depth, Tier::Cell}) {
    const std::string name = "arch." + std::string(to_string(t));
    const auto v = r.numbers(name, ArchParams::tier_size(t));
    std::copy(v.begin(), v.end(), s.arch.tier(t).begin());
  }
  detail::read_count(r, "kernels", SupernetState::kKernelCount, SupernetState::kKernelCount);
  s.weights.reserve(SupernetState::kKernelCount);
  for (std::size_t i = 0; i < SupernetState::kKernelCount; ++i) {
    const std::size_t line = r.line_number();
    ConvKernel k = detail::read_kernel(r);
    const std::size_t size = CandidateOp::from_index(i % kCandidateOpCount).kernel_size;
    if (k.out_channels() != s.channels || k.in_channels() != s.channels || k.kernel_height() != size ||
        k.kernel_width() != size) {
      throw ParseError("kernel " + std::to_string(i) + " must be " + std::to_string(s.channels) + "x" +
                           std::to_string(s.channels) + "x" + std::to_string(size) + "x" + std::to_string(size),
                       line);
    }
    s.weights.push_back(std::move(k));
  }
  r.finish();
  if (meta) *meta = std::move(m);
  return s;
}

// ---------------------------------------------------------------------------
// Files

inline std::string file_kind(std::string_view text) {
  detail::Reader r(text);
  r.expect(kFormatMagic);
  return std::string(r.one("kind"));
}

inline void save_model(const std::filesystem::path& path, const EnhancerModel& m, const ModelMeta& meta = {}) {
  write_file_atomic(path, serialize_model(m, meta));
}
inline EnhancerModel load_model(const std::filesystem::path& path, ModelMeta* meta = nullptr) {
  return parse_model(read_file(path), meta);
}

inline void save_block(const std::filesystem::path& path, const BlockFile& f, const ModelMeta& meta = {}) {
  write_file_atomic(path, serialize_block(f, meta));
}
inline BlockFile load_block(const std::filesystem::path& path, ModelMeta* meta = nullptr) {
  return parse_block(read_file(path), meta);
}

inline void save_checkpoint(const std::filesystem::path& path, const SupernetState& s, const ModelMeta& meta = {}) {
  write_file_atomic(path, serialize_checkpoint(s, meta));
}
inline SupernetState load_checkpoint(const std::filesystem::path& path, ModelMeta* meta = nullptr) {
  return parse_checkpoint(read_file(path), meta);
}

}  // namespace relume
