#pragma once

#include <stdexcept>
#include <string>

namespace khwm {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Zero/negative dimension, malformed layer spec.
struct InvalidSpecError : Error {
    using Error::Error;
};

// Shape mismatch, NaN gradient, violated call contract.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite loss or activation.
struct NumericError : Error {
    using Error::Error;
};

// Unparseable text (LLM output, metrics lines, config files).
struct ParseError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Reward plan/program references a name the task schema does not expose.
struct SchemaError : Error {
    using Error::Error;
};

// A pipeline phase failed; the experiment directory holds a resumable marker.
struct PhaseError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace khwm
