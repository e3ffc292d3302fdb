// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mxattn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise unusable numeric input.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Finite input outside the representable range of the target format.
class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent matrix or tile dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Metric is mathematically undefined for the given reference.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor file could not be opened, read or parsed.
class FileFormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mxattn
