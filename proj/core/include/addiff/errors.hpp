#pragma once

#include <stdexcept>

namespace addiff {

/// Raised when a forward pass or loss produces non-finite values. Training
/// treats it as divergence; sampling treats it as a broken checkpoint.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace addiff
