#pragma once

#include <stdexcept>
#include <string>

namespace randpot {

// Bad input: malformed configuration, parameter out of contract.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical breakdown: NaN/overflow during integration, failed convergence.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Evaluation requested exactly at a potential singularity.
struct SingularPointError : NumericalError {
    explicit SingularPointError(const std::string& msg) : NumericalError(msg) {}
};

// A constructed configuration failed its built-in verification.
struct VerificationError : std::runtime_error {
    explicit VerificationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace randpot
