#pragma once

#include <stdexcept>
#include <string>

namespace navgen {

// Base for every error raised by the library. Callers that only need a
// message can catch this; subclasses carry structured locus information.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MapError : public Error {
 public:
  using Error::Error;
};

class PathError : public Error {
 public:
  using Error::Error;
};

class CasError : public Error {
 public:
  CasError(const std::string& message, std::size_t position)
      : Error(message + " at position " + std::to_string(position)), position_(position) {}

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace navgen
