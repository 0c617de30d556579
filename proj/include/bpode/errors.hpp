#pragma once

#include <stdexcept>
#include <string>

namespace bpode {

/// Invalid user input: bad dimensions, bad configuration, violated preconditions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced non-finite values or a factorization failed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bpode
