#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mixwarp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidDimension : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class InvalidPoint : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// File access and format problems (unreadable files, bad headers, unsupported
// pixel formats, malformed CSV or config text).
class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  NotPositiveDefinite(std::size_t pivot, const std::string& what)
      : NumericalError(what), pivot_(pivot) {}

  // Row/column of the original (unpermuted) matrix where the pivot failed.
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

// All residuals vanish, so the residual variance cannot be estimated.
class DegenerateFit : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace mixwarp
