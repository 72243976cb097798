#pragma once

#include <stdexcept>
#include <string>

namespace stm {

/// Malformed input data (word streams, images, checkpoints, report files).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration value or unusable parameter combination.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Violation of a model precondition at runtime (out-of-order frames, etc.).
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stm
