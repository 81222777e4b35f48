#pragma once

#include <stdexcept>
#include <string>

namespace dforge {

// Bad caller input: shapes, tags, configuration values.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem or serialization failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or similar numerical breakdown during training.
class TrainingFault : public std::runtime_error {
 public:
  TrainingFault(std::string component, long step, const std::string& what)
      : std::runtime_error(what), component_(std::move(component)), step_(step) {}

  const std::string& component() const { return component_; }
  long step() const { return step_; }

 private:
  std::string component_;
  long step_;
};

}  // namespace dforge
