#pragma once

#include <stdexcept>
#include <string>

namespace bepa {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration detected before any compute (unknown screens, infeasible
// suite parameters, malformed config keys).
struct ConfigError : Error {
  using Error::Error;
};

// API misuse, e.g. stepping a terminal environment state.
struct UsageError : Error {
  using Error::Error;
};

// An action cannot be scored in its context (not in the legal set).
struct ScoringError : Error {
  using Error::Error;
};

// A data structure violates its documented invariants.
struct ContractError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Expert trace expansion failed against the current screen graph.
struct ConversionError : Error {
  using Error::Error;
};

struct EnvError : Error {
  using Error::Error;
};

}  // namespace bepa
