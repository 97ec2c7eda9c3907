#pragma once

#include <stdexcept>
#include <string>

namespace dmtpp {

/// Malformed or inconsistent input data (files, sequences, shapes).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values, failed domain checks, divergent optimisation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by the autodiff tape when an operation leaves its domain.
class DomainError : public NumericError {
public:
    DomainError(std::string op, const std::string& what)
        : NumericError(op + ": " + what), op_(std::move(op)) {}

    [[nodiscard]] const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

} // namespace dmtpp
