#pragma once

#include <stdexcept>
#include <string>

namespace lsn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Array dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnsupportedSizeError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CorruptDatasetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace lsn
