#pragma once

#include <stdexcept>
#include <string>

namespace itr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite input or a value outside the domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Matrix or vector shapes that do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Normal equations of a (generalized) least squares problem are singular.
class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

/// Fewer observations than free parameters.
class UnderIdentifiedError : public Error {
 public:
  using Error::Error;
};

/// No subject agrees with the rule, so the empirical value is 0/0.
class UndefinedValueError : public Error {
 public:
  using Error::Error;
};

/// Cross-validation split that leaves a training set without one arm.
class StratificationError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace itr
