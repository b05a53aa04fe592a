#pragma once

#include <stdexcept>
#include <string>

namespace skyhdr {

/// Bad arguments or configuration supplied by the caller.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed, missing or out-of-domain data (files, images, manifests).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite losses, failed convergence and similar numerical faults.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace skyhdr
