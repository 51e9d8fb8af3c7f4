#pragma once

#include <stdexcept>
#include <string>

namespace csou {

// Base for every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class CollisionError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class InfeasibleConfig : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class BadMagic : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatch : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedRecord : public IoError {
 public:
  TruncatedRecord(const std::string& what, std::size_t record_index)
      : IoError(what), record_index_(record_index) {}
  std::size_t record_index() const noexcept { return record_index_; }

 private:
  std::size_t record_index_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class AutodiffError : public Error {
 public:
  using Error::Error;
};

}  // namespace csou
