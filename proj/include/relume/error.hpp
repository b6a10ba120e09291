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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relume {

/// Base class for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two operands disagree on a dimension. `dimension()` names it ("channels",
/// "height", "kernel_width", ...).
class ShapeError : public Error {
 public:
  ShapeError(std::string dimension, std::size_t expected, std::size_t actual)
      : Error("shape mismatch in " + dimension + ": expected " + std::to_string(expected) +
              ", got " + std::to_string(actual)),
        dimension_(std::move(dimension)),
        expected_(expected),
        actual_(actual) {}

  const std::string& dimension() const noexcept { return dimension_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string dimension_;
  std::size_t expected_;
  std::size_t actual_;
};

/// A precondition on a scalar argument does not hold.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. `offset()` is a byte offset for binary formats
/// and a 1-based line number for the text model format.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Optimization produced a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace relume
