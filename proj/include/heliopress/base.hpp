// Copyright (c) the Heliopress Authors. All rights reserved.
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

#ifndef HELIOPRESS_BASE_HPP_
#define HELIOPRESS_BASE_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace hp {

// Error hierarchy. Every failure surfaces as one of these; the CLI maps
// them onto its documented exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer geometry violations (mismatched channels, non-dividing
// windows, non-multiple image extents, ...).
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Violated call contracts other than shapes (non-finite input to the
// quantizer, non-scalar loss, out-of-alphabet symbol, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Corrupt or truncated compressed data.
class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& msg) : Error(msg) {}
};

// Bitstream was produced by a different model (digest mismatch).
class WrongModelError : public Error {
 public:
  explicit WrongModelError(const std::string& msg) : Error(msg) {}
};

// Filesystem / file-format problems.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Bad user-facing configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Training aborted on repeated non-finite losses.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace hp

#endif  // HELIOPRESS_BASE_HPP_
