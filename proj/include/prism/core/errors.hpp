#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prism {

// Shape or dtype disagreement between operands.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration value (kernel width, depth, vocab size, ...).
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Malformed data: token ids out of range, unparsable sample lines.
class DataError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// API misuse: backward on a non-scalar, optimizer step without gradients.
class UsageError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
   public:
    NumericError(const std::string& what, std::ptrdiff_t step = -1)
        : std::runtime_error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what),
          step_(step) {}

    std::ptrdiff_t step() const { return step_; }

   private:
    std::ptrdiff_t step_;
};

class SingularityError : public NumericError {
   public:
    explicit SingularityError(double condition_estimate)
        : NumericError("matrix is numerically singular, condition estimate " +
                       std::to_string(condition_estimate)),
          condition_(condition_estimate) {}

    double condition_estimate() const { return condition_; }

   private:
    double condition_;
};

}  // namespace prism
