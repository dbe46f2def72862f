#pragma once

#include <stdexcept>
#include <string>

namespace dxchoice {

/// Bad input: malformed files, out-of-range parameters, unmet preconditions.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation that could not produce a usable number (infeasible target,
/// every fit failed, non-finite objective at the start point).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dxchoice
