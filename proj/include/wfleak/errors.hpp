#pragma once

#include <stdexcept>
#include <string>

namespace wfleak {

// Malformed or inconsistent input data (trace files, CSV, JSON artifacts).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure that cannot be recovered by a documented fallback.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace wfleak
