#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mgdl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point was handed to an operation outside [0,1]^d.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Inputs violate an operation's structural precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// The verification grid cannot resolve the requested cube size.
class GridTooCoarse : public Error {
 public:
  GridTooCoarse(const std::string& what, double required_spacing)
      : Error(what), required_spacing_(required_spacing) {}

  double required_spacing() const noexcept { return required_spacing_; }

 private:
  double required_spacing_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what), byte_offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace mgdl
