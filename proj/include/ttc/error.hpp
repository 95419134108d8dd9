// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ttc {

enum class ErrorCode {
  dimension = 1,
  configuration,
  divergence,
  degenerate_normalizer,
  format_magic,
  format_truncated,
  format_index,
  format_header,
  io,
};

/// Base of every exception thrown by the library. The code is what crosses
/// the C boundary.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorCode::dimension, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::configuration, what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
      : Error(ErrorCode::divergence,
              step ? what + " (inner step " + std::to_string(*step) + ")" : what),
        step_(step) {}
  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

class DegenerateNormalizerError : public Error {
 public:
  explicit DegenerateNormalizerError(const std::string& what)
      : Error(ErrorCode::degenerate_normalizer, what) {}
};

class FormatError : public Error {
 public:
  FormatError(ErrorCode code, const std::string& what) : Error(code, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::io, what) {}
};

}  // namespace ttc
