#pragma once

#include <stdexcept>
#include <string>

namespace fixsynth {

/// Bad input, broken precondition, or malformed file. The CLI maps it to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed to produce a usable result. The CLI maps it to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fixsynth
