#pragma once

#include <stdexcept>
#include <string>

namespace ev4dgs {

/// Malformed or inconsistent input data (files, dimensions, invariants).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An optimization or fit produced non-finite values.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ev4dgs
