#pragma once

#include <stdexcept>
#include <string>

namespace exprfuse {

// Root of every error the library reports. Each subclass maps onto one
// failure category that the command-line front end turns into an exit code.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class DimensionError : public Error {
   public:
    using Error::Error;
};

// Invalid hyperparameters or a config/weight disagreement.
class ConfigError : public Error {
   public:
    using Error::Error;
};

// Caller-supplied data is malformed (bad label, wrong width, NaN features).
class InputError : public Error {
   public:
    using Error::Error;
};

// API misuse: backward on a non-scalar, optimizer step without gradients.
class ContractError : public Error {
   public:
    using Error::Error;
};

// NaN/Inf produced by a computation, including training divergence.
class NumericError : public Error {
   public:
    using Error::Error;
};

// Dataset files are missing, inconsistent, or too small for the request.
class DataError : public Error {
   public:
    using Error::Error;
};

// Checkpoint is unreadable, corrupted, or from an unsupported version.
class CheckpointError : public Error {
   public:
    using Error::Error;
};

}  // namespace exprfuse
