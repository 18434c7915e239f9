#pragma once

#include <stdexcept>
#include <string>

namespace lagamc {

/// Bad input: malformed files, unknown labels, violated preconditions.
/// The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage or external call failed after its inputs were accepted.
/// The CLI maps it to exit code 3.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace lagamc
