#pragma once

#include <stdexcept>
#include <string>

namespace clinembed {

// Base for every library error. The CLI maps categories to exit codes:
// usage/config -> 2, format -> 3, everything else -> 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad arguments or violated preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid module configuration (e.g. dropout rate of 0 for SimCSE views).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid input data (out-of-range token id, all-masked row, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: zero-norm vectors, non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradients or other optimizer failures.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Misaligned record ids between paired inputs.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined on the given input (constant ranks, single-class labels).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file; carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what), offset_(-1) {}
  FormatError(const std::string& what, long long offset)
      : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

}  // namespace clinembed
