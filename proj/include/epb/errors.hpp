#pragma once

#include <stdexcept>
#include <string>

namespace epb {

/// Malformed or inconsistent input data: bad files, dangling ids, unknown labels.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numeric computation left the finite range (NaN loss, non-finite input).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace epb
