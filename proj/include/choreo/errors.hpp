#pragma once

#include <stdexcept>
#include <string>

namespace choreo {

// Precondition or shape contract broken by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A non-finite value was produced; carries the name of the offending operation.
class NumericFault : public std::runtime_error {
 public:
  explicit NumericFault(std::string op)
      : std::runtime_error("non-finite value produced by '" + op + "'"), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

// Retryable: not enough data yet (e.g. replay buffer too small to sample from).
class NotReady : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration, missing input file, incompatible checkpoint.
class StartupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CHOREO_REQUIRE(cond, msg)                                   \
  do {                                                              \
    if (!(cond)) throw ::choreo::ContractViolation(std::string(msg)); \
  } while (0)

}  // namespace choreo
