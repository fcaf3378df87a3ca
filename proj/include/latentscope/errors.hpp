#pragma once

#include <stdexcept>
#include <string>

namespace latentscope {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, ranks or indices that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain (rates, perplexity, cluster count...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A statistic is undefined for the given data (zero variance, all-zero core,
/// singular whitening).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file, bad magic, unsupported header.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace latentscope
