#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mcam {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Aggregates every rule violation found in a parameter set or config file.
struct ValidationError : Error {
    std::vector<std::string> failures;
    explicit ValidationError(std::vector<std::string> f)
        : Error(join(f)), failures(std::move(f)) {}

private:
    static std::string join(const std::vector<std::string>& f) {
        std::string msg = "validation failed:";
        for (const auto& s : f) msg += "\n  - " + s;
        return msg;
    }
};

struct AlignmentError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ConvergenceError : Error {
    double residual;
    ConvergenceError(const std::string& msg, double res)
        : Error(msg + " (residual " + std::to_string(res) + ")"), residual(res) {}
};

struct DivergenceError : Error {
    using Error::Error;
};

// Singular or reducible chain: no unique stationary distribution.
struct RankError : Error {
    using Error::Error;
};

}  // namespace mcam
