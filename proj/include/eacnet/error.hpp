#pragma once

#include <stdexcept>
#include <string>

namespace eacnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-conforming tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or user-supplied parameters (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Landmarks that collapse the inner-eye reference distance.
class DegenerateLandmarksError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (images, manifests, landmark files, configs).
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised when training produces a non-finite value.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Singular normal equations in the linear transfer head.
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

}  // namespace eacnet
