#pragma once

#include <stdexcept>
#include <string>

namespace pinnsim {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad files, dimension mismatches, inconsistent configs.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// A requested file does not exist.
class NotFoundError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// Stored network weights do not fit the layout a caller asked for.
class LayoutMismatchError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// Iterative solvers that fail to converge, singular systems, NaNs.
class NumericalError : public Error {
  public:
    using Error::Error;
};

/// Query outside the region a model was built for (e.g. dt beyond a
/// network's trained range, nonpositive voltage magnitude).
class DomainError : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

}  // namespace pinnsim
